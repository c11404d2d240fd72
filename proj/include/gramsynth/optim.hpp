// Copyright (c) 2026 The gramsynth authors
// SPDX-License-Identifier: Apache-2.0
//
// Optimizers: L-BFGS with a strong-Wolfe line search for input optimization,
// and Adam with exponential learning-rate annealing for toy training.
//
// The L-BFGS driver works on flat double vectors no matter which precision
// the tape underneath uses; callers adapt their tensors in the objective
// closure. A failed line search is a soft stop that returns the best point
// seen, because the synthesis losses are non-convex and a partial result is
// still useful. Non-finite objective values abort with NumericalError.

#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "gramsynth/tensor.hpp"

namespace gramsynth {

struct LbfgsConfig {
  int history = 10;
  int max_iters = 100;
  double grad_tol = 1e-6;
  double wolfe_c1 = 1e-4;
  double wolfe_c2 = 0.9;
  int max_line_search = 20;  // objective evaluations per line search

  void validate() const {
    if (history < 1) throw ParseError("lbfgs: history must be >= 1");
    if (!(0.0 < wolfe_c1 && wolfe_c1 < wolfe_c2 && wolfe_c2 < 1.0)) {
      throw ParseError("lbfgs: need 0 < c1 < c2 < 1");
    }
    if (max_iters < 0 || max_line_search < 1) throw ParseError("lbfgs: bad iteration limits");
  }
};

struct LbfgsResult {
  std::vector<double> x;
  double value = 0.0;
  std::vector<double> trace;  // f(x0), then the value after each iteration
  int iterations = 0;
  std::string stop_reason;  // "gradient", "max_iters", "line_search"
};

/// Objective callback: fills grad (resized by the caller) and returns f(x).
using Objective = std::function<double(const std::vector<double>&, std::vector<double>&)>;

namespace detail {

inline double vdot(const std::vector<double>& a, const std::vector<double>& b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

inline double vnorm(const std::vector<double>& a) { return std::sqrt(vdot(a, a)); }

inline void check_finite_objective(double f, const std::vector<double>& g) {
  if (!std::isfinite(f)) throw NumericalError("lbfgs: objective returned " + std::to_string(f));
  for (double v : g) {
    if (!std::isfinite(v)) throw NumericalError("lbfgs: gradient contains a non-finite value");
  }
}

}  // namespace detail

inline LbfgsResult lbfgs_minimize(const Objective& objective, std::vector<double> x0,
                                  const LbfgsConfig& cfg = {}) {
  cfg.validate();
  const size_t n = x0.size();
  LbfgsResult res;
  res.x = std::move(x0);
  std::vector<double> g(n);
  double f = objective(res.x, g);
  detail::check_finite_objective(f, g);
  res.value = f;
  res.trace.push_back(f);
  res.stop_reason = "max_iters";

  std::deque<std::vector<double>> s_hist, y_hist;
  std::deque<double> rho_hist;
  std::vector<double> d(n), x_try(n), g_try(n);

  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    const double gnorm = detail::vnorm(g);
    if (gnorm < cfg.grad_tol) {
      res.stop_reason = "gradient";
      break;
    }

    // Two-loop recursion for d = -H * g.
    d.assign(g.begin(), g.end());
    std::vector<double> alpha_coef(s_hist.size());
    for (size_t i = s_hist.size(); i-- > 0;) {
      alpha_coef[i] = rho_hist[i] * detail::vdot(s_hist[i], d);
      for (size_t k = 0; k < n; ++k) d[k] -= alpha_coef[i] * y_hist[i][k];
    }
    if (!s_hist.empty()) {
      const double gamma = detail::vdot(s_hist.back(), y_hist.back()) /
                           detail::vdot(y_hist.back(), y_hist.back());
      for (double& v : d) v *= gamma;
    }
    for (size_t i = 0; i < s_hist.size(); ++i) {
      const double beta = rho_hist[i] * detail::vdot(y_hist[i], d);
      for (size_t k = 0; k < n; ++k) d[k] += (alpha_coef[i] - beta) * s_hist[i][k];
    }
    for (double& v : d) v = -v;

    double dphi0 = detail::vdot(g, d);
    if (dphi0 >= 0.0) {  // curvature went bad; restart from steepest descent
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      for (size_t k = 0; k < n; ++k) d[k] = -g[k];
      dphi0 = -gnorm * gnorm;
    }

    // Strong-Wolfe line search (bracket, then zoom with cubic steps).
    const double phi0 = f;
    auto eval = [&](double a, double& phi, double& dphi) {
      for (size_t k = 0; k < n; ++k) x_try[k] = res.x[k] + a * d[k];
      phi = objective(x_try, g_try);
      detail::check_finite_objective(phi, g_try);
      dphi = detail::vdot(g_try, d);
    };

    int evals = 0;
    double best_a = 0.0, best_phi = phi0;
    double accepted = -1.0, accepted_phi = 0.0;
    std::vector<double> acc_x, acc_g;
    auto note_best = [&](double a, double phi) {
      if (phi < best_phi) {
        best_phi = phi;
        best_a = a;
      }
    };
    auto wolfe_ok = [&](double phi, double dphi, double a) {
      return phi <= phi0 + cfg.wolfe_c1 * a * dphi0 && std::abs(dphi) <= -cfg.wolfe_c2 * dphi0;
    };
    auto commit = [&](double a, double phi) {
      accepted = a;
      accepted_phi = phi;
      acc_x = x_try;
      acc_g = g_try;
    };

    // Zoom keeps [lo, hi] with phi(lo) the lowest admissible end.
    auto zoom = [&](double lo, double phi_lo, double dphi_lo, double hi, double phi_hi,
                    double dphi_hi) {
      while (evals < cfg.max_line_search) {
        double a;
        {
          const double d1 = dphi_lo + dphi_hi - 3.0 * (phi_lo - phi_hi) / (lo - hi);
          const double disc = d1 * d1 - dphi_lo * dphi_hi;
          if (disc >= 0.0) {
            const double d2 = ((hi > lo) ? 1.0 : -1.0) * std::sqrt(disc);
            a = hi - (hi - lo) * (dphi_hi + d2 - d1) / (dphi_hi - dphi_lo + 2.0 * d2);
          } else {
            a = 0.5 * (lo + hi);
          }
          const double lo_a = std::min(lo, hi), hi_a = std::max(lo, hi);
          const double margin = 0.1 * (hi_a - lo_a);
          if (!std::isfinite(a) || a < lo_a + margin || a > hi_a - margin) a = 0.5 * (lo + hi);
        }
        double phi, dphi;
        eval(a, phi, dphi);
        evals++;
        note_best(a, phi);
        if (phi > phi0 + cfg.wolfe_c1 * a * dphi0 || phi >= phi_lo) {
          hi = a;
          phi_hi = phi;
          dphi_hi = dphi;
        } else {
          if (std::abs(dphi) <= -cfg.wolfe_c2 * dphi0) {
            commit(a, phi);
            return;
          }
          if (dphi * (hi - lo) >= 0.0) {
            hi = lo;
            phi_hi = phi_lo;
            dphi_hi = dphi_lo;
          }
          lo = a;
          phi_lo = phi;
          dphi_lo = dphi;
        }
        if (std::abs(hi - lo) < 1e-16 * std::max(1.0, std::abs(lo))) return;
      }
    };

    double a_prev = 0.0, phi_prev = phi0, dphi_prev = dphi0;
    double a = (iter == 0) ? std::min(1.0, 1.0 / std::max(1.0, gnorm)) : 1.0;
    while (evals < cfg.max_line_search) {
      double phi, dphi;
      eval(a, phi, dphi);
      evals++;
      note_best(a, phi);
      if (phi > phi0 + cfg.wolfe_c1 * a * dphi0 || (evals > 1 && phi >= phi_prev)) {
        zoom(a_prev, phi_prev, dphi_prev, a, phi, dphi);
        break;
      }
      if (std::abs(dphi) <= -cfg.wolfe_c2 * dphi0) {
        commit(a, phi);
        // One secant refinement toward the one-dimensional minimizer when
        // the accepted step still carries noticeable slope. Near-quadratic
        // objectives regain conjugate-gradient-like convergence this way;
        // well-scaled steps skip the extra evaluation entirely.
        if (std::abs(dphi) > 0.1 * std::abs(dphi0) && evals < cfg.max_line_search &&
            dphi != dphi_prev) {
          const double a_star = a - dphi * (a - a_prev) / (dphi - dphi_prev);
          if (std::isfinite(a_star) && a_star > 0.0 && a_star <= 10.0 * a) {
            double phi_s, dphi_s;
            eval(a_star, phi_s, dphi_s);
            evals++;
            note_best(a_star, phi_s);
            if (phi_s <= accepted_phi && wolfe_ok(phi_s, dphi_s, a_star)) commit(a_star, phi_s);
          }
        }
        break;
      }
      if (dphi >= 0.0) {
        zoom(a, phi, dphi, a_prev, phi_prev, dphi_prev);
        break;
      }
      a_prev = a;
      phi_prev = phi;
      dphi_prev = dphi;
      a = std::min(2.0 * a, 1e10);
    }

    if (accepted < 0.0) {
      // No Wolfe point within budget. Take the best decrease if there was
      // one, otherwise stop where we stand.
      if (best_a > 0.0 && best_phi < phi0) {
        double phi_b, dphi_b;
        eval(best_a, phi_b, dphi_b);
        commit(best_a, phi_b);
      } else {
        res.stop_reason = "line_search";
        break;
      }
    }

    std::vector<double> s(n), y(n);
    for (size_t k = 0; k < n; ++k) {
      s[k] = accepted * d[k];
      y[k] = acc_g[k] - g[k];
    }
    res.x.swap(acc_x);
    g.swap(acc_g);
    f = accepted_phi;
    res.value = f;
    res.trace.push_back(f);
    res.iterations = iter + 1;

    const double sy = detail::vdot(s, y);
    if (sy > 1e-10 * detail::vnorm(s) * detail::vnorm(y)) {
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(y));
      rho_hist.push_back(1.0 / sy);
      if (static_cast<int>(s_hist.size()) > cfg.history) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
  }
  if (res.stop_reason == "max_iters" && detail::vnorm(g) < cfg.grad_tol) {
    res.stop_reason = "gradient";
  }
  return res;
}

// ---- Adam ------------------------------------------------------------------

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-6;
  double lr_start = 1e-3;
  double lr_end = 1e-6;
  long anneal_steps = 5000;  // exponential decay horizon
  double weight_decay = 1e-6;

  void validate() const {
    if (!(0.0 <= beta1 && beta1 < 1.0 && 0.0 <= beta2 && beta2 < 1.0)) {
      throw ParseError("adam: betas must lie in [0, 1)");
    }
    if (epsilon <= 0.0 || lr_start < 0.0 || lr_end < 0.0 || anneal_steps < 1) {
      throw ParseError("adam: bad epsilon, learning rate, or anneal horizon");
    }
  }

  /// Exponential anneal from lr_start to lr_end over anneal_steps, constant
  /// at lr_end afterwards. step is zero-based.
  double learning_rate(long step) const {
    if (lr_start == 0.0) return 0.0;
    const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(anneal_steps));
    return lr_start * std::pow(lr_end / lr_start, frac);
  }
};

template <typename Real>
struct AdamState {
  Tensor<Real> m, v;
  long step = 0;  // completed updates
};

/// One bias-corrected Adam update with decoupled weight decay. The state is
/// sized lazily on first use and must keep matching afterwards.
template <typename Real>
void adam_step(Tensor<Real>& params, const Tensor<Real>& grad, AdamState<Real>& state,
               const AdamConfig& cfg) {
  cfg.validate();
  if (params.shape != grad.shape) {
    throw ShapeError("adam: params " + shape_str(params.shape) + " vs grad " + shape_str(grad.shape));
  }
  if (state.m.data.empty()) {
    state.m = Tensor<Real>(params.shape, Real(0));
    state.v = Tensor<Real>(params.shape, Real(0));
  } else if (state.m.shape != params.shape) {
    throw ShapeError("adam: state " + shape_str(state.m.shape) + " vs params " + shape_str(params.shape));
  }
  const double lr = cfg.learning_rate(state.step);
  state.step++;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (long i = 0; i < params.size(); ++i) {
    const double gi = static_cast<double>(grad[i]);
    const double mi = cfg.beta1 * static_cast<double>(state.m[i]) + (1.0 - cfg.beta1) * gi;
    const double vi = cfg.beta2 * static_cast<double>(state.v[i]) + (1.0 - cfg.beta2) * gi * gi;
    state.m[i] = static_cast<Real>(mi);
    state.v[i] = static_cast<Real>(vi);
    const double update = (mi / bc1) / (std::sqrt(vi / bc2) + cfg.epsilon);
    const double decayed = static_cast<double>(params[i]) * (1.0 - lr * cfg.weight_decay);
    params[i] = static_cast<Real>(decayed - lr * update);
  }
}

}  // namespace gramsynth
