// Copyright (c) 2026 The gramsynth authors
// SPDX-License-Identifier: Apache-2.0
//
// Central-difference verification of tape gradients. The harness perturbs
// each variable element by +/- step, replays the tape, and compares the
// resulting slope against the analytic gradient.

#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "gramsynth/tape.hpp"

namespace gramsynth {

struct GradCheckReport {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  long elements = 0;
  // Worst offender, kept for diagnostics.
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  NodeId worst_var = -1;
  long worst_index = -1;

  bool passed(double tol) const { return max_rel_err < tol; }
};

/// Relative error with a small absolute floor so that near-zero gradients
/// are judged by absolute difference instead of blowing up the ratio.
inline double gradcheck_rel_err(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / denom;
}

/// Checks d(loss)/d(var) for every element of every listed variable against
/// central differences with the given step. The tape is left in its original
/// state (values restored and recomputed).
template <typename Real>
GradCheckReport finite_diff_check(Tape<Real>& tape, NodeId loss, const std::vector<NodeId>& vars,
                                  double step = 1e-5) {
  GradCheckReport report;
  GradientMap<Real> analytic = tape.backward(loss);
  for (NodeId v : vars) {
    const Tensor<Real> original = tape.value(v);
    const Tensor<Real>& grad = analytic.at(v);
    for (long i = 0; i < original.size(); ++i) {
      Tensor<Real> bumped = original;
      bumped[i] = original[i] + static_cast<Real>(step);
      tape.set_value(v, bumped);
      tape.recompute();
      const double up = static_cast<double>(tape.value(loss)[0]);
      bumped[i] = original[i] - static_cast<Real>(step);
      tape.set_value(v, bumped);
      tape.recompute();
      const double down = static_cast<double>(tape.value(loss)[0]);
      const double numeric = (up - down) / (2.0 * step);
      const double a = static_cast<double>(grad[i]);
      const double rel = gradcheck_rel_err(a, numeric);
      const double abs_err = std::abs(a - numeric);
      report.max_abs_err = std::max(report.max_abs_err, abs_err);
      report.elements++;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
        report.worst_var = v;
        report.worst_index = i;
      }
    }
    tape.set_value(v, original);
  }
  tape.recompute();
  return report;
}

}  // namespace gramsynth
