// Copyright (c) 2026 The gramsynth authors
// SPDX-License-Identifier: Apache-2.0
//
// Speaker-identity evaluation: Gram-statistics feature vectors, 1-nearest-
// neighbor classification, a classical (Torgerson) MDS embedding, and the
// synthetic toy-speaker corpus used for desk-scale experiments.
//
// A toy "speaker" is a fixed fundamental plus a fixed spectral envelope
// (tilt and one resonance). An utterance is a random sequence of harmonic
// segments and silences; each segment carries one of three band emphases,
// and that type sequence doubles as the transcript for CTC training.

#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "gramsynth/ctc.hpp"
#include "gramsynth/frontend.hpp"
#include "gramsynth/losses.hpp"
#include "gramsynth/network.hpp"
#include "gramsynth/random.hpp"
#include "gramsynth/tensor.hpp"

namespace gramsynth {

/// Concatenated, unit-L2-normalized flattened Gram tensors of the listed
/// layers. An empty layer list yields the Gram of the features themselves,
/// the "raw" baseline with no network involved.
template <typename Real>
std::vector<double> gram_feature_vector(const Tensor<Real>& features,
                                        const std::vector<std::string>& layers,
                                        const NetworkSpec& spec, const WeightStore<Real>& store) {
  std::vector<double> out;
  if (layers.empty()) {
    const auto g = gram_tensor(features);
    out.reserve(static_cast<size_t>(g.values.size()));
    for (long i = 0; i < g.values.size(); ++i) out.push_back(static_cast<double>(g.values[i]));
  } else {
    const auto acts = collect_activations(features, spec, store);
    for (const auto& layer : layers) {
      auto it = acts.find(layer);
      if (it == acts.end()) throw ParseError("gram_feature_vector: unknown layer " + layer);
      const auto g = gram_tensor(it->second);
      for (long i = 0; i < g.values.size(); ++i) out.push_back(static_cast<double>(g.values[i]));
    }
  }
  double norm = 0.0;
  for (double v : out) norm += v * v;
  norm = std::sqrt(norm);
  if (norm > 0.0) {
    for (double& v : out) v /= norm;
  }
  return out;
}

struct LabeledVector {
  std::vector<double> vec;
  int label = 0;
};

/// 1-NN under Euclidean distance; ties resolve to the lowest training index.
inline int nn_classify(const std::vector<LabeledVector>& train, const std::vector<double>& query) {
  if (train.empty()) throw std::invalid_argument("nn_classify: empty training set");
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < train.size(); ++i) {
    if (train[i].vec.size() != query.size()) {
      throw ShapeError("nn_classify: vector length mismatch at training index " + std::to_string(i));
    }
    double d = 0.0;
    for (size_t k = 0; k < query.size(); ++k) {
      const double diff = train[i].vec[k] - query[k];
      d += diff * diff;
    }
    if (d < best_d) {
      best_d = d;
      best = train[i].label;
    }
  }
  return best;
}

/// Fraction of points whose label survives 1-NN against all others.
inline double leave_one_out_accuracy(const std::vector<LabeledVector>& data,
                                     std::vector<int>* predictions = nullptr) {
  if (data.empty()) throw std::invalid_argument("leave_one_out_accuracy: empty data");
  long correct = 0;
  if (predictions) predictions->clear();
  for (size_t q = 0; q < data.size(); ++q) {
    std::vector<LabeledVector> rest;
    rest.reserve(data.size() - 1);
    for (size_t i = 0; i < data.size(); ++i) {
      if (i != q) rest.push_back(data[i]);
    }
    const int pred = nn_classify(rest, data[q].vec);
    if (predictions) predictions->push_back(pred);
    if (pred == data[q].label) correct++;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

/// Classical MDS: double-center the squared distances, extract the top
/// eigenpairs by shifted power iteration with deflation, and scale the
/// eigenvectors by sqrt(eigenvalue). Negative eigenvalues (non-Euclidean
/// inputs) clamp to zero coordinates.
inline Tensor<double> classical_mds(const Tensor<double>& dist, int dim = 2) {
  if (dist.rank() != 2 || dist.shape[0] != dist.shape[1]) {
    throw ShapeError("classical_mds: distance matrix must be square, got " + shape_str(dist.shape));
  }
  const long n = dist.shape[0];
  for (long i = 0; i < n; ++i) {
    if (dist.at2(i, i) != 0.0) throw std::invalid_argument("classical_mds: nonzero diagonal");
    for (long j = 0; j < n; ++j) {
      if (dist.at2(i, j) != dist.at2(j, i)) throw std::invalid_argument("classical_mds: asymmetric input");
      if (dist.at2(i, j) < 0.0) throw std::invalid_argument("classical_mds: negative distance");
    }
  }

  // B = -1/2 J D^2 J with J the centering projector.
  Tensor<double> b(Shape{n, n});
  std::vector<double> row_mean(static_cast<size_t>(n), 0.0);
  double grand = 0.0;
  for (long i = 0; i < n; ++i) {
    for (long j = 0; j < n; ++j) {
      const double d2 = dist.at2(i, j) * dist.at2(i, j);
      row_mean[static_cast<size_t>(i)] += d2;
      grand += d2;
    }
    row_mean[static_cast<size_t>(i)] /= static_cast<double>(n);
  }
  grand /= static_cast<double>(n * n);
  double frob = 0.0;
  for (long i = 0; i < n; ++i) {
    for (long j = 0; j < n; ++j) {
      const double d2 = dist.at2(i, j) * dist.at2(i, j);
      b.at2(i, j) = -0.5 * (d2 - row_mean[static_cast<size_t>(i)] - row_mean[static_cast<size_t>(j)] + grand);
      frob += b.at2(i, j) * b.at2(i, j);
    }
  }
  frob = std::sqrt(frob);

  Tensor<double> coords(Shape{n, static_cast<long>(dim)}, 0.0);
  if (frob == 0.0) return coords;  // all points coincide

  // The +frob*I shift makes the spectrum positive, so plain power iteration
  // always converges to the algebraically largest eigenvalue of B.
  for (int k = 0; k < dim; ++k) {
    std::vector<double> v(static_cast<size_t>(n));
    for (long i = 0; i < n; ++i) v[static_cast<size_t>(i)] = 1.0 + 1e-3 * static_cast<double>(i + k);
    double lambda = 0.0;
    std::vector<double> bv(static_cast<size_t>(n));
    for (int it = 0; it < 100000; ++it) {
      for (long i = 0; i < n; ++i) {
        double s = frob * v[static_cast<size_t>(i)];
        for (long j = 0; j < n; ++j) s += b.at2(i, j) * v[static_cast<size_t>(j)];
        bv[static_cast<size_t>(i)] = s;
      }
      double norm = 0.0;
      for (double e : bv) norm += e * e;
      norm = std::sqrt(norm);
      if (norm == 0.0) break;
      double delta = 0.0;
      for (long i = 0; i < n; ++i) {
        bv[static_cast<size_t>(i)] /= norm;
        delta = std::max(delta, std::abs(bv[static_cast<size_t>(i)] - v[static_cast<size_t>(i)]));
      }
      v.swap(bv);
      if (delta < 1e-12) break;
    }
    lambda = 0.0;
    for (long i = 0; i < n; ++i) {
      double s = 0.0;
      for (long j = 0; j < n; ++j) s += b.at2(i, j) * v[static_cast<size_t>(j)];
      lambda += s * v[static_cast<size_t>(i)];  // Rayleigh quotient of the unshifted B
    }
    if (lambda > 0.0) {
      const double scale = std::sqrt(lambda);
      for (long i = 0; i < n; ++i) coords.at2(i, k) = scale * v[static_cast<size_t>(i)];
    }
    // Deflate whether or not the eigenvalue was kept, so the next pass
    // finds the following eigenpair.
    for (long i = 0; i < n; ++i) {
      for (long j = 0; j < n; ++j) {
        b.at2(i, j) -= lambda * v[static_cast<size_t>(i)] * v[static_cast<size_t>(j)];
      }
    }
  }
  return coords;
}

// ---- toy corpus ------------------------------------------------------------

struct ToyUtterance {
  Waveform wave;
  int speaker = 0;
  LabelSeq labels;  // segment-type sequence; symbols 1..3
};

struct ToyCorpus {
  std::vector<ToyUtterance> utterances;
  std::vector<std::string> charset = {"_", "a", "e", "o"};
  int num_speakers = 0;
};

namespace detail {

struct ToySpeaker {
  double f0_hz = 0.0;
  double tilt = 0.0;          // harmonic rolloff exponent
  double resonance_hz = 0.0;  // one speaker-specific formant
  double resonance_width = 0.0;
  double resonance_gain = 0.0;
};

inline double toy_segment_emphasis(int type, double freq_hz) {
  // Band centers for the three segment types, shared by all speakers. The
  // lowest band starts above the fundamentals (90..250 Hz) and is wide
  // enough to span several mel channels, so the class cue survives the
  // network's frequency pooling for every voice.
  static constexpr double centers[3] = {700.0, 1800.0, 4000.0};
  static constexpr double widths[3] = {400.0, 500.0, 900.0};
  const double z = (freq_hz - centers[type - 1]) / widths[type - 1];
  return 1.0 + 3.0 * std::exp(-0.5 * z * z);
}

inline double toy_harmonic_amp(const ToySpeaker& sp, int type, int harmonic) {
  const double f = sp.f0_hz * harmonic;
  const double rz = (f - sp.resonance_hz) / sp.resonance_width;
  const double envelope = (1.0 + sp.resonance_gain * std::exp(-0.5 * rz * rz)) /
                          std::pow(static_cast<double>(harmonic), sp.tilt);
  return envelope * toy_segment_emphasis(type, f);
}

}  // namespace detail

/// Deterministic synthetic corpus: num_speakers voices, utts_per_speaker
/// utterances each, 16 kHz, roughly one to two seconds per utterance.
inline ToyCorpus toy_corpus(int num_speakers, int utts_per_speaker, std::uint64_t seed) {
  if (num_speakers < 1 || utts_per_speaker < 1) {
    throw std::invalid_argument("toy_corpus: need at least one speaker and one utterance");
  }
  constexpr long sr = 16000;
  ToyCorpus corpus;
  corpus.num_speakers = num_speakers;
  Rng master(seed);

  std::vector<detail::ToySpeaker> speakers;
  for (int s = 0; s < num_speakers; ++s) {
    Rng rng = master.fork(static_cast<std::uint64_t>(s) + 1);
    detail::ToySpeaker sp;
    // Stratified fundamentals keep every pair of speakers apart.
    const double band = (250.0 - 90.0) / static_cast<double>(num_speakers);
    sp.f0_hz = 90.0 + band * (static_cast<double>(s) + rng.uniform(0.25, 0.75));
    sp.tilt = rng.uniform(0.6, 1.1);
    sp.resonance_hz = rng.uniform(800.0, 3500.0);
    sp.resonance_width = rng.uniform(200.0, 500.0);
    sp.resonance_gain = rng.uniform(2.0, 5.0);
    speakers.push_back(sp);
  }

  for (int s = 0; s < num_speakers; ++s) {
    for (int u = 0; u < utts_per_speaker; ++u) {
      Rng rng = master.fork(1000 + static_cast<std::uint64_t>(s) * 4096 + static_cast<std::uint64_t>(u));
      const detail::ToySpeaker& sp = speakers[static_cast<size_t>(s)];
      ToyUtterance utt;
      utt.speaker = s;

      std::vector<double> samples;
      auto add_silence = [&](double seconds) {
        samples.resize(samples.size() + static_cast<size_t>(seconds * sr), 0.0);
      };
      const double gain = rng.uniform(0.35, 1.0);
      const double noise_amp = rng.uniform(0.002, 0.008);
      add_silence(rng.uniform(0.08, 0.15));
      const int num_segments = rng.uniform_int(2, 4);
      for (int seg = 0; seg < num_segments; ++seg) {
        const int type = rng.uniform_int(1, 3);
        utt.labels.push_back(type);
        const long len = static_cast<long>(rng.uniform(0.15, 0.35) * sr);
        const double seg_gain = gain * rng.uniform(0.7, 1.3);
        const double f0 = sp.f0_hz * rng.uniform(0.97, 1.03);  // small per-segment drift
        const int harmonics = static_cast<int>(7600.0 / f0);
        std::vector<double> phase(static_cast<size_t>(harmonics) + 1);
        std::vector<double> amp(static_cast<size_t>(harmonics) + 1);
        for (int h = 1; h <= harmonics; ++h) {
          phase[static_cast<size_t>(h)] = rng.uniform(0.0, 2.0 * std::numbers::pi);
          amp[static_cast<size_t>(h)] = detail::toy_harmonic_amp(sp, type, h);
        }
        const long ramp = sr / 100;  // 10 ms raised-cosine edges
        const size_t start = samples.size();
        samples.resize(start + static_cast<size_t>(len));
        for (long n = 0; n < len; ++n) {
          const double t = static_cast<double>(n) / static_cast<double>(sr);
          double x = 0.0;
          for (int h = 1; h <= harmonics; ++h) {
            x += amp[static_cast<size_t>(h)] *
                 std::sin(2.0 * std::numbers::pi * f0 * h * t + phase[static_cast<size_t>(h)]);
          }
          double w = 1.0;
          if (n < ramp) w = 0.5 - 0.5 * std::cos(std::numbers::pi * n / ramp);
          if (len - 1 - n < ramp) w = std::min(w, 0.5 - 0.5 * std::cos(std::numbers::pi * (len - 1 - n) / ramp));
          samples[start + static_cast<size_t>(n)] = 0.035 * seg_gain * w * x;
        }
        add_silence(rng.uniform(0.05, 0.15));
      }
      add_silence(rng.uniform(0.05, 0.1));

      // A light noise floor over everything, then a safety clamp.
      for (double& v : samples) v += noise_amp * rng.gaussian();
      double peak = 0.0;
      for (double v : samples) peak = std::max(peak, std::abs(v));
      if (peak > 0.95) {
        for (double& v : samples) v *= 0.95 / peak;
      }

      utt.wave.samples = std::move(samples);
      utt.wave.sample_rate_hz = sr;
      corpus.utterances.push_back(std::move(utt));
    }
  }
  return corpus;
}

}  // namespace gramsynth
