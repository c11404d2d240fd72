// Copyright (c) 2026 The gramsynth authors
// SPDX-License-Identifier: Apache-2.0
//
// Differentiable feature pipeline: framing, Hamming window, DFT against
// precomputed real matrices, smooth modulus, mixed linear/mel filterbank,
// log compression, and delta features. Every step is recorded on the tape
// so gradients reach back to waveform samples or to a spectrogram variable.

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "gramsynth/tape.hpp"
#include "gramsynth/tensor.hpp"

namespace gramsynth {

struct FrontendConfig {
  long sample_rate_hz = 16000;
  long window_len_samples = 400;  // 25 ms
  long hop_samples = 160;         // 10 ms
  long dft_size = 512;
  long kept_bins = 257;
  long num_channels = 80;
  double linear_mel_boundary_hz = 1000.0;
  double fmax_hz = 8000.0;
  double modulus_epsilon = 1e-3;
  double log_floor = 1e-6;

  static FrontendConfig paper() { return FrontendConfig{}; }

  /// Desk-scale variant driving the toy network: 20 filterbank channels.
  /// The linear/mel boundary moves down to 250 Hz so that the linear block
  /// (one channel per 31.25 Hz bin) still fits under the channel budget.
  static FrontendConfig toy() {
    FrontendConfig cfg;
    cfg.num_channels = 20;
    cfg.linear_mel_boundary_hz = 250.0;
    return cfg;
  }

  double bin_spacing_hz() const {
    return static_cast<double>(sample_rate_hz) / static_cast<double>(dft_size);
  }

  long linear_channel_count() const {
    return static_cast<long>(std::floor(linear_mel_boundary_hz / bin_spacing_hz()));
  }

  void validate() const {
    if (window_len_samples > dft_size) throw ParseError("frontend config: window longer than DFT size");
    if (hop_samples > window_len_samples || hop_samples < 1) {
      throw ParseError("frontend config: hop must be in [1, window length]");
    }
    if (!(linear_mel_boundary_hz < fmax_hz && fmax_hz <= sample_rate_hz / 2.0)) {
      throw ParseError("frontend config: need boundary < fmax <= sample_rate/2");
    }
    if (kept_bins != dft_size / 2 + 1) throw ParseError("frontend config: kept_bins must equal dft_size/2+1");
    if (linear_channel_count() >= num_channels) {
      throw ParseError("frontend config: " + std::to_string(num_channels) +
                       " channels cannot cover " + std::to_string(linear_channel_count()) +
                       " linear bins plus at least one mel filter");
    }
  }
};

struct Waveform {
  std::vector<double> samples;
  long sample_rate_hz = 16000;

  long length() const { return static_cast<long>(samples.size()); }
};

inline double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
inline double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

/// Hamming window of the configured length, w[n] = 0.54 - 0.46 cos(2 pi n / (N-1)).
template <typename Real>
Tensor<Real> hamming_window(const FrontendConfig& cfg) {
  const long N = cfg.window_len_samples;
  Tensor<Real> w(Shape{N});
  for (long n = 0; n < N; ++n) {
    w[n] = static_cast<Real>(0.54 - 0.46 * std::cos(2.0 * M_PI * static_cast<double>(n) /
                                                    static_cast<double>(N - 1)));
  }
  return w;
}

/// Real and imaginary DFT analysis matrices, dft_size x kept_bins. Frames are
/// zero padded up to dft_size before the product, so rows past the window
/// length only ever meet zeros.
template <typename Real>
void dft_matrices(const FrontendConfig& cfg, Tensor<Real>& re, Tensor<Real>& im) {
  const long N = cfg.dft_size, B = cfg.kept_bins;
  re = Tensor<Real>(Shape{N, B});
  im = Tensor<Real>(Shape{N, B});
  for (long n = 0; n < N; ++n) {
    for (long k = 0; k < B; ++k) {
      const double phase = 2.0 * M_PI * static_cast<double>(n) * static_cast<double>(k) /
                           static_cast<double>(N);
      re.at2(n, k) = static_cast<Real>(std::cos(phase));
      im.at2(n, k) = static_cast<Real>(-std::sin(phase));
    }
  }
}

/// Mixed linear/mel filterbank as a kept_bins x num_channels matrix.
/// Channels below the boundary copy one STFT bin each; the rest are
/// triangular mel filters with edges uniform on the mel scale up to fmax.
template <typename Real>
Tensor<Real> build_filterbank(const FrontendConfig& cfg) {
  cfg.validate();
  const long B = cfg.kept_bins, C = cfg.num_channels;
  const long n_linear = cfg.linear_channel_count();
  const long n_mel = C - n_linear;
  const double spacing = cfg.bin_spacing_hz();
  Tensor<Real> fb(Shape{B, C});
  for (long c = 0; c < n_linear; ++c) fb.at2(c, c) = Real(1);
  const double mel_lo = hz_to_mel(cfg.linear_mel_boundary_hz);
  const double mel_hi = hz_to_mel(cfg.fmax_hz);
  // n_mel triangles need n_mel + 2 edge points.
  std::vector<double> edges(static_cast<size_t>(n_mel) + 2);
  for (size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) /
                         static_cast<double>(n_mel + 1));
  }
  for (long m = 0; m < n_mel; ++m) {
    const double left = edges[static_cast<size_t>(m)];
    const double center = edges[static_cast<size_t>(m) + 1];
    const double right = edges[static_cast<size_t>(m) + 2];
    for (long k = 0; k < B; ++k) {
      const double f = static_cast<double>(k) * spacing;
      double w = 0.0;
      if (f > left && f < center) {
        w = (f - left) / (center - left);
      } else if (f == center) {
        w = 1.0;
      } else if (f > center && f < right) {
        w = (right - f) / (right - center);
      }
      if (w > 0.0) fb.at2(k, n_linear + m) = static_cast<Real>(w);
    }
  }
  // Triangles narrower than one bin would silence a channel; the mel spacing
  // above the 31.25 Hz grid rules that out, but assert the invariant anyway.
  for (long c = 0; c < C; ++c) {
    double colsum = 0.0;
    for (long k = 0; k < B; ++k) colsum += static_cast<double>(fb.at2(k, c));
    if (!(colsum > 0.0)) {
      throw ParseError("filterbank column " + std::to_string(c) + " is empty");
    }
  }
  return fb;
}

/// Precomputed constants for the feature pipeline, shareable across tapes.
template <typename Real>
struct FrontendMatrices {
  FrontendConfig cfg;
  Tensor<Real> window;
  Tensor<Real> dft_re;
  Tensor<Real> dft_im;
  Tensor<Real> filterbank;

  explicit FrontendMatrices(const FrontendConfig& c) : cfg(c) {
    cfg.validate();
    window = hamming_window<Real>(cfg);
    dft_matrices(cfg, dft_re, dft_im);
    filterbank = build_filterbank<Real>(cfg);
  }
};

/// Node handles into a recorded feature pipeline.
struct FeatureNodes {
  NodeId frames = -1;       // T x window_len, windowed
  NodeId magnitude = -1;    // T x kept_bins
  NodeId log_mel = -1;      // T x num_channels, static features
  NodeId delta = -1;        // T x num_channels
  NodeId delta_delta = -1;  // T x num_channels
  NodeId features = -1;     // T x num_channels x 3
};

inline std::vector<double> delta_kernel() { return {-0.2, -0.1, 0.0, 0.1, 0.2}; }

namespace detail {

/// Shared tail of both entry points: filterbank, log, deltas, stacking.
template <typename Real>
FeatureNodes features_from_magnitude_node(Tape<Real>& tape, NodeId magnitude,
                                          const FrontendMatrices<Real>& mats, FeatureNodes nodes) {
  const FrontendConfig& cfg = mats.cfg;
  nodes.magnitude = magnitude;
  auto fb = tape.constant(mats.filterbank);
  auto mel = tape.matmul(magnitude, fb);
  nodes.log_mel = tape.log(tape.add_scalar(mel, static_cast<Real>(cfg.log_floor)));
  std::vector<Real> kernel;
  for (double k : delta_kernel()) kernel.push_back(static_cast<Real>(k));
  nodes.delta = tape.time_conv(nodes.log_mel, kernel);
  nodes.delta_delta = tape.time_conv(nodes.delta, kernel);
  const long T = tape.value(nodes.log_mel).shape[0];
  const Shape col{T, cfg.num_channels, 1};
  nodes.features = tape.concat({tape.reshape(nodes.log_mel, col), tape.reshape(nodes.delta, col),
                                tape.reshape(nodes.delta_delta, col)},
                               2);
  return nodes;
}

}  // namespace detail

/// Records the feature pipeline from a T x kept_bins magnitude node (the
/// stage-1 entry point; the magnitude itself is typically a variable).
template <typename Real>
FeatureNodes features_from_magnitude(Tape<Real>& tape, NodeId magnitude,
                                     const FrontendMatrices<Real>& mats) {
  const Tensor<Real>& v = tape.value(magnitude);
  if (v.rank() != 2 || v.shape[1] != mats.cfg.kept_bins) {
    throw ShapeError("features_from_magnitude: expected [T x " + std::to_string(mats.cfg.kept_bins) +
                     "], got " + shape_str(v.shape));
  }
  return detail::features_from_magnitude_node(tape, magnitude, mats, FeatureNodes{});
}

/// Records the full pipeline from a 1-D waveform node (length >= window).
template <typename Real>
FeatureNodes features_from_waveform(Tape<Real>& tape, NodeId wave, const FrontendMatrices<Real>& mats) {
  const FrontendConfig& cfg = mats.cfg;
  const Tensor<Real>& v = tape.value(wave);
  if (v.rank() != 1) throw ShapeError("features_from_waveform: expected 1-D samples, got " + shape_str(v.shape));
  if (v.shape[0] < cfg.window_len_samples) {
    throw ShapeError("features_from_waveform: waveform of " + std::to_string(v.shape[0]) +
                     " samples is shorter than one " + std::to_string(cfg.window_len_samples) +
                     "-sample window");
  }
  FeatureNodes nodes;
  auto raw_frames = tape.frame_gather(wave, cfg.window_len_samples, cfg.hop_samples);
  auto win = tape.constant(mats.window);
  auto zero = tape.constant(Tensor<Real>(Shape{cfg.window_len_samples}, Real(0)));
  nodes.frames = tape.chan_affine(raw_frames, win, zero);
  auto padded = tape.pad_cols(nodes.frames, cfg.dft_size);
  auto re = tape.matmul(padded, tape.constant(mats.dft_re));
  auto im = tape.matmul(padded, tape.constant(mats.dft_im));
  auto power = tape.add(tape.square(re), tape.square(im));
  auto magnitude = tape.sqrt(tape.add_scalar(power, static_cast<Real>(cfg.modulus_epsilon)));
  return detail::features_from_magnitude_node(tape, magnitude, mats, nodes);
}

inline long frame_count(long num_samples, const FrontendConfig& cfg) {
  if (num_samples < cfg.window_len_samples) return 0;
  return (num_samples - cfg.window_len_samples) / cfg.hop_samples + 1;
}

/// Convenience evaluation without keeping the tape around.
inline Tensor<double> compute_features(const Waveform& w, const FrontendMatrices<double>& mats) {
  Tape<double> tape;
  auto wave = tape.constant(Tensor<double>(Shape{w.length()}, w.samples));
  auto nodes = features_from_waveform(tape, wave, mats);
  return tape.value(nodes.features);
}

}  // namespace gramsynth
