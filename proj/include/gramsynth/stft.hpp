// Copyright (c) 2026 The gramsynth authors
// SPDX-License-Identifier: Apache-2.0
//
// Exact-modulus STFT analysis, overlap-add resynthesis, and Griffin-Lim
// phase reconstruction. Runs in double precision only; the differentiable
// smooth-modulus pipeline lives in frontend.hpp, this file handles audio.

#pragma once

#include <cmath>
#include <vector>

#include "gramsynth/frontend.hpp"
#include "gramsynth/random.hpp"
#include "gramsynth/tensor.hpp"

namespace gramsynth {

/// STFT analysis/synthesis engine with precomputed trig tables.
class Stft {
public:
  explicit Stft(const FrontendConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    const long W = cfg_.window_len_samples, N = cfg_.dft_size, B = cfg_.kept_bins;
    window_.resize(static_cast<size_t>(W));
    for (long n = 0; n < W; ++n) {
      window_[static_cast<size_t>(n)] =
          0.54 - 0.46 * std::cos(2.0 * M_PI * static_cast<double>(n) / static_cast<double>(W - 1));
    }
    cos_.assign(static_cast<size_t>(N * B), 0.0);
    sin_.assign(static_cast<size_t>(N * B), 0.0);
    for (long n = 0; n < N; ++n) {
      for (long k = 0; k < B; ++k) {
        const double phase = 2.0 * M_PI * static_cast<double>(n) * static_cast<double>(k) /
                             static_cast<double>(N);
        cos_[static_cast<size_t>(n * B + k)] = std::cos(phase);
        sin_[static_cast<size_t>(n * B + k)] = std::sin(phase);
      }
    }
  }

  const FrontendConfig& config() const { return cfg_; }

  /// Windowed DFT of every frame; fills T x kept_bins real and imaginary parts.
  void analyze(const std::vector<double>& samples, Tensor<double>& re, Tensor<double>& im) const {
    const long W = cfg_.window_len_samples, B = cfg_.kept_bins, H = cfg_.hop_samples;
    const long T = frame_count(static_cast<long>(samples.size()), cfg_);
    if (T < 1) throw ShapeError("stft: waveform shorter than one window");
    re = Tensor<double>(Shape{T, B});
    im = Tensor<double>(Shape{T, B});
    std::vector<double> frame(static_cast<size_t>(W));
    for (long t = 0; t < T; ++t) {
      for (long n = 0; n < W; ++n) {
        frame[static_cast<size_t>(n)] = samples[static_cast<size_t>(t * H + n)] * window_[static_cast<size_t>(n)];
      }
      for (long k = 0; k < B; ++k) {
        double sr = 0.0, si = 0.0;
        for (long n = 0; n < W; ++n) {
          const double v = frame[static_cast<size_t>(n)];
          sr += v * cos_[static_cast<size_t>(n * B + k)];
          si -= v * sin_[static_cast<size_t>(n * B + k)];
        }
        re.at2(t, k) = sr;
        im.at2(t, k) = si;
      }
    }
  }

  Tensor<double> magnitude(const std::vector<double>& samples) const {
    Tensor<double> re, im;
    analyze(samples, re, im);
    Tensor<double> mag(re.shape);
    for (long i = 0; i < mag.size(); ++i) mag[i] = std::hypot(re[i], im[i]);
    return mag;
  }

  /// Inverse DFT of one hermitian-extended spectrum row; returns dft_size
  /// time samples (the analysis frame occupied the first window_len of them).
  std::vector<double> idft_frame(const double* re_row, const double* im_row) const {
    const long N = cfg_.dft_size, B = cfg_.kept_bins;
    std::vector<double> out(static_cast<size_t>(N), 0.0);
    for (long n = 0; n < N; ++n) {
      double acc = re_row[0];  // k = 0, weight 1
      for (long k = 1; k < B - 1; ++k) {
        acc += 2.0 * (re_row[k] * cos_[static_cast<size_t>(n * B + k)] -
                      im_row[k] * sin_[static_cast<size_t>(n * B + k)]);
      }
      acc += re_row[B - 1] * cos_[static_cast<size_t>(n * B + B - 1)] -
             im_row[B - 1] * sin_[static_cast<size_t>(n * B + B - 1)];
      out[static_cast<size_t>(n)] = acc / static_cast<double>(N);
    }
    return out;
  }

  /// Overlap-add synthesis with Hamming synthesis windows and window-square
  /// normalization (floor 1e-8). Output length (T-1)*hop + window_len.
  Waveform synthesize(const Tensor<double>& re, const Tensor<double>& im) const {
    const long W = cfg_.window_len_samples, B = cfg_.kept_bins, H = cfg_.hop_samples;
    if (re.rank() != 2 || re.shape[1] != B || !re.same_shape(im)) {
      throw ShapeError("istft: expected matching [T x " + std::to_string(B) + "] parts, got " +
                       shape_str(re.shape) + " and " + shape_str(im.shape));
    }
    const long T = re.shape[0];
    const long N = (T - 1) * H + W;
    std::vector<double> acc(static_cast<size_t>(N), 0.0);
    std::vector<double> norm(static_cast<size_t>(N), 0.0);
    for (long t = 0; t < T; ++t) {
      const std::vector<double> frame = idft_frame(&re.data[static_cast<size_t>(t * B)],
                                                   &im.data[static_cast<size_t>(t * B)]);
      for (long n = 0; n < W; ++n) {
        const double w = window_[static_cast<size_t>(n)];
        acc[static_cast<size_t>(t * H + n)] += w * frame[static_cast<size_t>(n)];
        norm[static_cast<size_t>(t * H + n)] += w * w;
      }
    }
    Waveform out;
    out.sample_rate_hz = cfg_.sample_rate_hz;
    out.samples.resize(static_cast<size_t>(N));
    for (long i = 0; i < N; ++i) {
      out.samples[static_cast<size_t>(i)] = acc[static_cast<size_t>(i)] /
                                            std::max(norm[static_cast<size_t>(i)], 1e-8);
    }
    return out;
  }

  const std::vector<double>& window() const { return window_; }

private:
  FrontendConfig cfg_;
  std::vector<double> window_;
  std::vector<double> cos_;
  std::vector<double> sin_;
};

struct GriffinLimResult {
  Waveform waveform;
  std::vector<double> sc_trace;  // spectral convergence after each iteration
};

inline double spectral_convergence(const Tensor<double>& mag_have, const Tensor<double>& mag_want,
                                   double mag_norm) {
  double num = 0.0;
  for (long i = 0; i < mag_have.size(); ++i) {
    const double d = mag_have[i] - mag_want[i];
    num += d * d;
  }
  return std::sqrt(num) / mag_norm;
}

/// Alternating-projection phase reconstruction. Phases start uniform random
/// from the seed; each iteration resynthesizes and re-analyzes, with a mild
/// momentum extrapolation on the analyzed spectrum (fast Griffin-Lim). The
/// default momentum was tuned so the spectral-convergence trace stays
/// monotone while reaching the target rate; momentum 0 recovers the classic
/// iteration. An all-zero magnitude returns silence with SC defined as 0.
inline GriffinLimResult griffin_lim(const Tensor<double>& mag, const FrontendConfig& cfg,
                                    int iterations, std::uint64_t seed, double momentum = 0.92) {
  if (mag.rank() != 2 || mag.shape[1] != cfg.kept_bins) {
    throw ShapeError("griffin_lim: expected [T x " + std::to_string(cfg.kept_bins) + "], got " +
                     shape_str(mag.shape));
  }
  const Stft stft(cfg);
  const long T = mag.shape[0], B = cfg.kept_bins;
  double mag_norm_sq = 0.0;
  for (long i = 0; i < mag.size(); ++i) mag_norm_sq += mag[i] * mag[i];
  GriffinLimResult result;
  if (mag_norm_sq == 0.0) {
    result.waveform.sample_rate_hz = cfg.sample_rate_hz;
    result.waveform.samples.assign(static_cast<size_t>((T - 1) * cfg.hop_samples + cfg.window_len_samples), 0.0);
    result.sc_trace.assign(static_cast<size_t>(std::max(iterations, 0)), 0.0);
    return result;
  }
  const double mag_norm = std::sqrt(mag_norm_sq);
  Rng rng(seed);
  // Unit phasors; the synthesized spectrum is always mag * angle.
  Tensor<double> ang_re(mag.shape), ang_im(mag.shape);
  for (long t = 0; t < T; ++t) {
    for (long k = 0; k < B; ++k) {
      const double phi = rng.uniform(0.0, 2.0 * M_PI);
      ang_re.at2(t, k) = std::cos(phi);
      ang_im.at2(t, k) = std::sin(phi);
    }
  }
  Tensor<double> prev_re(mag.shape), prev_im(mag.shape);
  Tensor<double> re(mag.shape), im(mag.shape);
  const double mscale = momentum / (1.0 + momentum);
  for (int it = 0; it < iterations; ++it) {
    for (long i = 0; i < mag.size(); ++i) {
      re[i] = mag[i] * ang_re[i];
      im[i] = mag[i] * ang_im[i];
    }
    result.waveform = stft.synthesize(re, im);
    Tensor<double> are, aim;
    stft.analyze(result.waveform.samples, are, aim);
    double num = 0.0;
    for (long i = 0; i < mag.size(); ++i) {
      const double d = std::hypot(are[i], aim[i]) - mag[i];
      num += d * d;
    }
    result.sc_trace.push_back(std::sqrt(num) / mag_norm);
    for (long i = 0; i < mag.size(); ++i) {
      const double er = are[i] - mscale * prev_re[i];
      const double ei = aim[i] - mscale * prev_im[i];
      const double norm = std::hypot(er, ei) + 1e-16;
      ang_re[i] = er / norm;
      ang_im[i] = ei / norm;
      prev_re[i] = are[i];
      prev_im[i] = aim[i];
    }
  }
  if (iterations <= 0) {
    for (long i = 0; i < mag.size(); ++i) {
      re[i] = mag[i] * ang_re[i];
      im[i] = mag[i] * ang_im[i];
    }
    result.waveform = stft.synthesize(re, im);
  }
  return result;
}

}  // namespace gramsynth
