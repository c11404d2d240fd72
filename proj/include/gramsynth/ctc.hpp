// Copyright (c) 2026 The gramsynth authors
// SPDX-License-Identifier: Apache-2.0
//
// CTC negative log-likelihood with analytic gradient, plus the greedy
// decoder used for sanity checks. The forward-backward recursion runs in
// log space over the blank-augmented label sequence; internals stay in
// double regardless of the tape's precision.

#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "gramsynth/tape.hpp"
#include "gramsynth/tensor.hpp"

namespace gramsynth {

using LabelSeq = std::vector<int>;  // symbol ids in [1, V-1]; blank is 0

inline constexpr int kCtcBlank = 0;

/// Shortest frame count that admits an alignment: one frame per label plus
/// one separating blank per adjacent repeat.
inline long ctc_min_frames(const LabelSeq& labels) {
  long repeats = 0;
  for (size_t i = 1; i < labels.size(); ++i) {
    if (labels[i] == labels[i - 1]) repeats++;
  }
  return static_cast<long>(labels.size()) + repeats;
}

namespace detail {

inline double log_add(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

}  // namespace detail

template <typename Real>
struct CtcResult {
  double loss = 0.0;       // negative log-likelihood
  Tensor<Real> grad;       // d loss / d logits, T x V
};

/// Forward-backward CTC loss. Throws when labels are empty, out of range,
/// or infeasible for the number of frames.
template <typename Real>
CtcResult<Real> ctc_loss(const Tensor<Real>& logits, const LabelSeq& labels) {
  if (logits.rank() != 2) throw ShapeError("ctc_loss: logits must be [T x V], got " + shape_str(logits.shape));
  const long T = logits.shape[0], V = logits.shape[1];
  if (labels.empty()) throw std::invalid_argument("ctc_loss: empty label sequence");
  for (int l : labels) {
    if (l < 1 || l >= V) {
      throw std::invalid_argument("ctc_loss: label " + std::to_string(l) + " outside [1, " +
                                  std::to_string(V - 1) + "]");
    }
  }
  if (T < ctc_min_frames(labels)) {
    throw std::invalid_argument("ctc_loss: " + std::to_string(T) + " frames cannot align " +
                                std::to_string(labels.size()) + " labels (need >= " +
                                std::to_string(ctc_min_frames(labels)) + ")");
  }
  const double neg_inf = -std::numeric_limits<double>::infinity();

  // Per-frame log softmax in double.
  std::vector<double> lp(static_cast<size_t>(T * V));
  for (long t = 0; t < T; ++t) {
    double mx = neg_inf;
    for (long v = 0; v < V; ++v) mx = std::max(mx, static_cast<double>(logits.at2(t, v)));
    double z = 0.0;
    for (long v = 0; v < V; ++v) z += std::exp(static_cast<double>(logits.at2(t, v)) - mx);
    const double log_z = mx + std::log(z);
    for (long v = 0; v < V; ++v) {
      lp[static_cast<size_t>(t * V + v)] = static_cast<double>(logits.at2(t, v)) - log_z;
    }
  }

  // Blank-augmented sequence: blank, l1, blank, l2, ..., blank.
  const long L = static_cast<long>(labels.size());
  const long S = 2 * L + 1;
  auto sym = [&](long s) { return (s % 2 == 0) ? kCtcBlank : labels[static_cast<size_t>(s / 2)]; };

  std::vector<double> alpha(static_cast<size_t>(T * S), neg_inf);
  std::vector<double> beta(static_cast<size_t>(T * S), neg_inf);
  alpha[0] = lp[static_cast<size_t>(kCtcBlank)];
  if (S > 1) alpha[1] = lp[static_cast<size_t>(sym(1))];
  for (long t = 1; t < T; ++t) {
    for (long s = 0; s < S; ++s) {
      double a = alpha[static_cast<size_t>((t - 1) * S + s)];
      if (s >= 1) a = detail::log_add(a, alpha[static_cast<size_t>((t - 1) * S + s - 1)]);
      if (s >= 2 && sym(s) != kCtcBlank && sym(s) != sym(s - 2)) {
        a = detail::log_add(a, alpha[static_cast<size_t>((t - 1) * S + s - 2)]);
      }
      alpha[static_cast<size_t>(t * S + s)] = a + lp[static_cast<size_t>(t * V + sym(s))];
    }
  }
  const double log_p = detail::log_add(alpha[static_cast<size_t>((T - 1) * S + S - 1)],
                                       S > 1 ? alpha[static_cast<size_t>((T - 1) * S + S - 2)] : neg_inf);

  beta[static_cast<size_t>((T - 1) * S + S - 1)] = lp[static_cast<size_t>((T - 1) * V + sym(S - 1))];
  if (S > 1) beta[static_cast<size_t>((T - 1) * S + S - 2)] = lp[static_cast<size_t>((T - 1) * V + sym(S - 2))];
  for (long t = T - 2; t >= 0; --t) {
    for (long s = S - 1; s >= 0; --s) {
      double b = beta[static_cast<size_t>((t + 1) * S + s)];
      if (s + 1 < S) b = detail::log_add(b, beta[static_cast<size_t>((t + 1) * S + s + 1)]);
      if (s + 2 < S && sym(s + 2) != kCtcBlank && sym(s + 2) != sym(s)) {
        b = detail::log_add(b, beta[static_cast<size_t>((t + 1) * S + s + 2)]);
      }
      beta[static_cast<size_t>(t * S + s)] = b + lp[static_cast<size_t>(t * V + sym(s))];
    }
  }

  // Gradient: softmax minus the symbol-occupancy posterior. alpha and beta
  // both contain the emission at (t, s), so it is divided back out.
  CtcResult<Real> result;
  result.loss = -log_p;
  result.grad = Tensor<Real>(logits.shape);
  for (long t = 0; t < T; ++t) {
    std::vector<double> occ(static_cast<size_t>(V), neg_inf);
    for (long s = 0; s < S; ++s) {
      const long v = sym(s);
      const double g = alpha[static_cast<size_t>(t * S + s)] + beta[static_cast<size_t>(t * S + s)] -
                       lp[static_cast<size_t>(t * V + v)];
      occ[static_cast<size_t>(v)] = detail::log_add(occ[static_cast<size_t>(v)], g);
    }
    for (long v = 0; v < V; ++v) {
      const double softmax = std::exp(lp[static_cast<size_t>(t * V + v)]);
      const double posterior = std::exp(occ[static_cast<size_t>(v)] - log_p);
      result.grad.at2(t, v) = static_cast<Real>(softmax - posterior);
    }
  }
  return result;
}

/// Records the CTC loss as one tape node; the analytic gradient from the
/// forward pass is cached and replayed during backward.
template <typename Real>
NodeId ctc_loss_node(Tape<Real>& tape, NodeId logits, LabelSeq labels) {
  auto cached = std::make_shared<Tensor<Real>>();
  auto fwd = [logits, labels, cached](Tape<Real>& t, Tensor<Real>& out) {
    CtcResult<Real> r = ctc_loss(t.value(logits), labels);
    *cached = std::move(r.grad);
    out = Tensor<Real>::scalar(static_cast<Real>(r.loss));
  };
  auto bwd = [logits, cached](Tape<Real>& t, const Tensor<Real>& og, std::vector<Tensor<Real>>& grads) {
    if (!t.wants_grad(logits, grads)) return;
    Tensor<Real>& dst = t.grad_slot(logits, grads);
    for (long i = 0; i < dst.size(); ++i) dst[i] += og[0] * (*cached)[i];
  };
  return tape.custom("ctc_loss", {logits}, std::move(fwd), std::move(bwd));
}

/// Per-frame argmax, collapse consecutive repeats, drop blanks.
template <typename Real>
LabelSeq greedy_decode(const Tensor<Real>& logits) {
  if (logits.rank() != 2) throw ShapeError("greedy_decode: logits must be [T x V]");
  const long T = logits.shape[0], V = logits.shape[1];
  LabelSeq out;
  int prev = -1;
  for (long t = 0; t < T; ++t) {
    int best = 0;
    for (long v = 1; v < V; ++v) {
      if (logits.at2(t, v) > logits.at2(t, best)) best = static_cast<int>(v);
    }
    if (best != prev && best != kCtcBlank) out.push_back(best);
    prev = best;
  }
  return out;
}

/// Edit distance between label sequences, for symbol error rates.
inline long edit_distance(const LabelSeq& a, const LabelSeq& b) {
  const size_t n = a.size(), m = b.size();
  std::vector<long> row(m + 1);
  for (size_t j = 0; j <= m; ++j) row[j] = static_cast<long>(j);
  for (size_t i = 1; i <= n; ++i) {
    long diag = row[0];
    row[0] = static_cast<long>(i);
    for (size_t j = 1; j <= m; ++j) {
      const long sub = diag + (a[i - 1] == b[j - 1] ? 0 : 1);
      diag = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, sub});
    }
  }
  return row[m];
}

/// Charset file: UTF-8, one symbol per line, line 0 reserved for the blank.
inline std::vector<std::string> read_charset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open charset file '" + path + "'");
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    out.push_back(line);
  }
  if (out.size() < 2) throw ParseError("charset file needs the blank line plus at least one symbol");
  return out;
}

inline void write_charset(const std::string& path, const std::vector<std::string>& charset) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open charset file '" + path + "' for writing");
  for (const auto& s : charset) out << s << "\n";
}

}  // namespace gramsynth
