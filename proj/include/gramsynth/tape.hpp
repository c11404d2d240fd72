// Copyright (c) 2026 The gramsynth authors
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode differentiation on an append-only tape. Every operation
// evaluates eagerly when recorded; backward() replays the tape in reverse
// and accumulates gradients for the designated variable leaves.
//
// The operator set is exactly what the feature pipeline and the
// convolutional network need: elementwise arithmetic, scalar ops, the
// nonlinearities, matmul, same-padded 2-D convolution, non-overlapping
// max-pooling, per-channel affine, axis reductions, concatenation,
// frame gathering, and reshape. No broadcasting beyond that.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "gramsynth/tensor.hpp"

namespace gramsynth {

using NodeId = int;

/// Gradients of a scalar loss with respect to every variable leaf of a tape.
/// Variables unreachable from the loss carry all-zero tensors.
template <typename Real>
struct GradientMap {
  std::map<NodeId, Tensor<Real>> grads;

  const Tensor<Real>& at(NodeId id) const {
    auto it = grads.find(id);
    if (it == grads.end()) throw std::out_of_range("no gradient recorded for node " + std::to_string(id));
    return it->second;
  }
};

template <typename Real>
class Tape {
public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  // ---- leaves ------------------------------------------------------------

  NodeId constant(Tensor<Real> value) { return push_leaf(std::move(value), false); }

  NodeId variable(Tensor<Real> value) { return push_leaf(std::move(value), true); }

  /// Replaces the value of a leaf; shapes must match. Recorded operation
  /// results cannot be overwritten, use recompute() to refresh them.
  void set_value(NodeId id, Tensor<Real> value) {
    Node& n = node(id);
    if (n.forward) throw std::invalid_argument("set_value: node " + std::to_string(id) + " is not a leaf");
    if (n.value.shape != value.shape) {
      throw ShapeError("set_value: shape " + shape_str(value.shape) + " does not match leaf shape " +
                       shape_str(n.value.shape));
    }
    n.value = std::move(value);
  }

  /// Replays every recorded operation in order, refreshing values after
  /// leaves have been updated with set_value().
  void recompute() {
    for (auto& n : nodes_) {
      if (n.forward) n.forward(*this, n.value);
    }
  }

  const Tensor<Real>& value(NodeId id) const { return node(id).value; }
  const std::string& op_name(NodeId id) const { return node(id).op; }
  size_t size() const { return nodes_.size(); }
  const std::vector<NodeId>& variables() const { return variables_; }

  // ---- elementwise -------------------------------------------------------

  NodeId add(NodeId a, NodeId b) {
    return binary_elementwise("add", a, b, [](Real x, Real y) { return x + y; },
                              [](Tape&, const Tensor<Real>& og, Tensor<Real>* da, Tensor<Real>* db,
                                 const Tensor<Real>&, const Tensor<Real>&) {
                                for (long i = 0; i < og.size(); ++i) {
                                  if (da) (*da)[i] += og[i];
                                  if (db) (*db)[i] += og[i];
                                }
                              });
  }

  NodeId sub(NodeId a, NodeId b) {
    return binary_elementwise("sub", a, b, [](Real x, Real y) { return x - y; },
                              [](Tape&, const Tensor<Real>& og, Tensor<Real>* da, Tensor<Real>* db,
                                 const Tensor<Real>&, const Tensor<Real>&) {
                                for (long i = 0; i < og.size(); ++i) {
                                  if (da) (*da)[i] += og[i];
                                  if (db) (*db)[i] -= og[i];
                                }
                              });
  }

  NodeId mul(NodeId a, NodeId b) {
    return binary_elementwise("mul", a, b, [](Real x, Real y) { return x * y; },
                              [](Tape&, const Tensor<Real>& og, Tensor<Real>* da, Tensor<Real>* db,
                                 const Tensor<Real>& va, const Tensor<Real>& vb) {
                                for (long i = 0; i < og.size(); ++i) {
                                  if (da) (*da)[i] += og[i] * vb[i];
                                  if (db) (*db)[i] += og[i] * va[i];
                                }
                              });
  }

  NodeId div(NodeId a, NodeId b) {
    return binary_elementwise("div", a, b, [](Real x, Real y) { return x / y; },
                              [](Tape&, const Tensor<Real>& og, Tensor<Real>* da, Tensor<Real>* db,
                                 const Tensor<Real>& va, const Tensor<Real>& vb) {
                                for (long i = 0; i < og.size(); ++i) {
                                  const Real inv = Real(1) / vb[i];
                                  if (da) (*da)[i] += og[i] * inv;
                                  if (db) (*db)[i] -= og[i] * va[i] * inv * inv;
                                }
                              });
  }

  NodeId add_scalar(NodeId a, Real s) {
    return unary("add_scalar", a, [s](Real x) { return x + s; },
                 [](const Tensor<Real>& og, Tensor<Real>& da, const Tensor<Real>&, const Tensor<Real>&) {
                   for (long i = 0; i < og.size(); ++i) da[i] += og[i];
                 });
  }

  NodeId mul_scalar(NodeId a, Real s) {
    return unary("mul_scalar", a, [s](Real x) { return x * s; },
                 [s](const Tensor<Real>& og, Tensor<Real>& da, const Tensor<Real>&, const Tensor<Real>&) {
                   for (long i = 0; i < og.size(); ++i) da[i] += og[i] * s;
                 });
  }

  NodeId square(NodeId a) {
    return unary("square", a, [](Real x) { return x * x; },
                 [](const Tensor<Real>& og, Tensor<Real>& da, const Tensor<Real>& va, const Tensor<Real>&) {
                   for (long i = 0; i < og.size(); ++i) da[i] += og[i] * Real(2) * va[i];
                 });
  }

  NodeId sqrt(NodeId a) {
    return unary("sqrt", a, [](Real x) { return std::sqrt(x); },
                 [](const Tensor<Real>& og, Tensor<Real>& da, const Tensor<Real>&, const Tensor<Real>& out) {
                   for (long i = 0; i < og.size(); ++i) da[i] += og[i] * Real(0.5) / out[i];
                 });
  }

  NodeId log(NodeId a) {
    return unary("log", a, [](Real x) { return std::log(x); },
                 [](const Tensor<Real>& og, Tensor<Real>& da, const Tensor<Real>& va, const Tensor<Real>&) {
                   for (long i = 0; i < og.size(); ++i) da[i] += og[i] / va[i];
                 });
  }

  NodeId exp(NodeId a) {
    return unary("exp", a, [](Real x) { return std::exp(x); },
                 [](const Tensor<Real>& og, Tensor<Real>& da, const Tensor<Real>&, const Tensor<Real>& out) {
                   for (long i = 0; i < og.size(); ++i) da[i] += og[i] * out[i];
                 });
  }

  // Subgradient at exactly zero is zero.
  NodeId relu(NodeId a) {
    return unary("relu", a, [](Real x) { return x > Real(0) ? x : Real(0); },
                 [](const Tensor<Real>& og, Tensor<Real>& da, const Tensor<Real>& va, const Tensor<Real>&) {
                   for (long i = 0; i < og.size(); ++i) {
                     if (va[i] > Real(0)) da[i] += og[i];
                   }
                 });
  }

  // ---- linear algebra ----------------------------------------------------

  NodeId matmul(NodeId a, NodeId b) {
    const Tensor<Real>& va = value(a);
    const Tensor<Real>& vb = value(b);
    if (va.rank() != 2 || vb.rank() != 2 || va.shape[1] != vb.shape[0]) {
      throw ShapeError("matmul: incompatible shapes " + shape_str(va.shape) + " and " + shape_str(vb.shape));
    }
    const long M = va.shape[0], K = va.shape[1], N = vb.shape[1];
    auto fwd = [a, b, M, K, N](Tape& t, Tensor<Real>& out) {
      if (out.shape.empty()) out = Tensor<Real>(Shape{M, N});
      const Real* A = t.value(a).data.data();
      const Real* B = t.value(b).data.data();
      Real* C = out.data.data();
      std::fill(out.data.begin(), out.data.end(), Real(0));
      for (long m = 0; m < M; ++m) {
        for (long k = 0; k < K; ++k) {
          const Real av = A[m * K + k];
          const Real* Bk = B + k * N;
          Real* Cm = C + m * N;
          for (long n = 0; n < N; ++n) Cm[n] += av * Bk[n];
        }
      }
    };
    auto bwd = [a, b, M, K, N](Tape& t, const Tensor<Real>& og, std::vector<Tensor<Real>>& grads) {
      const Real* A = t.value(a).data.data();
      const Real* B = t.value(b).data.data();
      const Real* G = og.data.data();
      if (t.wants_grad(a, grads)) {
        Real* dA = t.grad_slot(a, grads).data.data();
        for (long m = 0; m < M; ++m) {
          for (long k = 0; k < K; ++k) {
            const Real* Bk = B + k * N;
            const Real* Gm = G + m * N;
            Real acc = 0;
            for (long n = 0; n < N; ++n) acc += Gm[n] * Bk[n];
            dA[m * K + k] += acc;
          }
        }
      }
      if (t.wants_grad(b, grads)) {
        Real* dB = t.grad_slot(b, grads).data.data();
        for (long m = 0; m < M; ++m) {
          for (long k = 0; k < K; ++k) {
            const Real av = A[m * K + k];
            const Real* Gm = G + m * N;
            Real* dBk = dB + k * N;
            for (long n = 0; n < N; ++n) dBk[n] += av * Gm[n];
          }
        }
      }
    };
    return push_op("matmul", {a, b}, fwd, bwd);
  }

  /// 2-D convolution over (time, frequency) with stride 1 and zero "same"
  /// padding. Input T x F x Cin, kernel kt x kf x Cin x Cout, both filter
  /// extents odd.
  NodeId conv2d(NodeId x, NodeId k) {
    const Tensor<Real>& vx = value(x);
    const Tensor<Real>& vk = value(k);
    if (vx.rank() != 3 || vk.rank() != 4 || vx.shape[2] != vk.shape[2]) {
      throw ShapeError("conv2d: incompatible shapes " + shape_str(vx.shape) + " and " + shape_str(vk.shape));
    }
    if (vk.shape[0] % 2 == 0 || vk.shape[1] % 2 == 0) {
      throw ShapeError("conv2d: filter extents must be odd, got " + shape_str(vk.shape));
    }
    const long T = vx.shape[0], F = vx.shape[1], Ci = vx.shape[2];
    const long Kt = vk.shape[0], Kf = vk.shape[1], Co = vk.shape[3];
    const long rt = Kt / 2, rf = Kf / 2;
    auto fwd = [=](Tape& t, Tensor<Real>& out) {
      if (out.shape.empty()) out = Tensor<Real>(Shape{T, F, Co});
      const Real* X = t.value(x).data.data();
      const Real* W = t.value(k).data.data();
      Real* O = out.data.data();
      std::fill(out.data.begin(), out.data.end(), Real(0));
      for (long tt = 0; tt < T; ++tt) {
        for (long ff = 0; ff < F; ++ff) {
          Real* o = O + (tt * F + ff) * Co;
          for (long dt = -rt; dt <= rt; ++dt) {
            const long ti = tt + dt;
            if (ti < 0 || ti >= T) continue;
            for (long df = -rf; df <= rf; ++df) {
              const long fi = ff + df;
              if (fi < 0 || fi >= F) continue;
              const Real* xi = X + (ti * F + fi) * Ci;
              const Real* wk = W + ((dt + rt) * Kf + (df + rf)) * Ci * Co;
              for (long ci = 0; ci < Ci; ++ci) {
                const Real xv = xi[ci];
                const Real* wo = wk + ci * Co;
                for (long co = 0; co < Co; ++co) o[co] += xv * wo[co];
              }
            }
          }
        }
      }
    };
    auto bwd = [=](Tape& t, const Tensor<Real>& og, std::vector<Tensor<Real>>& grads) {
      const Real* X = t.value(x).data.data();
      const Real* W = t.value(k).data.data();
      const Real* G = og.data.data();
      const bool wx = t.wants_grad(x, grads);
      const bool wk2 = t.wants_grad(k, grads);
      Real* dX = wx ? t.grad_slot(x, grads).data.data() : nullptr;
      Real* dW = wk2 ? t.grad_slot(k, grads).data.data() : nullptr;
      for (long tt = 0; tt < T; ++tt) {
        for (long ff = 0; ff < F; ++ff) {
          const Real* g = G + (tt * F + ff) * Co;
          for (long dt = -rt; dt <= rt; ++dt) {
            const long ti = tt + dt;
            if (ti < 0 || ti >= T) continue;
            for (long df = -rf; df <= rf; ++df) {
              const long fi = ff + df;
              if (fi < 0 || fi >= F) continue;
              const long in_base = (ti * F + fi) * Ci;
              const long w_base = ((dt + rt) * Kf + (df + rf)) * Ci * Co;
              for (long ci = 0; ci < Ci; ++ci) {
                const Real* wo = W + w_base + ci * Co;
                Real acc = 0;
                for (long co = 0; co < Co; ++co) acc += g[co] * wo[co];
                if (wx) dX[in_base + ci] += acc;
                if (wk2) {
                  const Real xv = X[in_base + ci];
                  Real* dwo = dW + w_base + ci * Co;
                  for (long co = 0; co < Co; ++co) dwo[co] += xv * g[co];
                }
              }
            }
          }
        }
      }
    };
    return push_op("conv2d", {x, k}, fwd, bwd);
  }

  /// Non-overlapping max-pooling over (time, frequency); trailing elements
  /// that do not fill a window are dropped. Gradient flows to the argmax
  /// element, ties resolved to the lowest flat index.
  NodeId maxpool2d(NodeId x, long pool_t, long pool_f) {
    const Tensor<Real>& vx = value(x);
    if (vx.rank() != 3) throw ShapeError("maxpool2d: expected rank-3 input, got " + shape_str(vx.shape));
    if (pool_t < 1 || pool_f < 1) throw ShapeError("maxpool2d: pooling factors must be >= 1");
    const long T = vx.shape[0], F = vx.shape[1], C = vx.shape[2];
    const long To = T / pool_t, Fo = F / pool_f;
    if (To < 1 || Fo < 1) {
      throw ShapeError("maxpool2d: input " + shape_str(vx.shape) + " smaller than pooling window " +
                       std::to_string(pool_t) + "x" + std::to_string(pool_f));
    }
    auto argmax = std::make_shared<std::vector<long>>();
    auto fwd = [=](Tape& t, Tensor<Real>& out) {
      if (out.shape.empty()) out = Tensor<Real>(Shape{To, Fo, C});
      argmax->assign(static_cast<size_t>(To * Fo * C), 0);
      const Real* X = t.value(x).data.data();
      Real* O = out.data.data();
      for (long to = 0; to < To; ++to) {
        for (long fo = 0; fo < Fo; ++fo) {
          for (long c = 0; c < C; ++c) {
            Real best = X[((to * pool_t) * F + fo * pool_f) * C + c];
            long best_ix = ((to * pool_t) * F + fo * pool_f) * C + c;
            for (long dt = 0; dt < pool_t; ++dt) {
              for (long df = 0; df < pool_f; ++df) {
                const long ix = ((to * pool_t + dt) * F + fo * pool_f + df) * C + c;
                if (X[ix] > best) {
                  best = X[ix];
                  best_ix = ix;
                }
              }
            }
            const long out_ix = (to * Fo + fo) * C + c;
            O[out_ix] = best;
            (*argmax)[static_cast<size_t>(out_ix)] = best_ix;
          }
        }
      }
    };
    auto bwd = [=](Tape& t, const Tensor<Real>& og, std::vector<Tensor<Real>>& grads) {
      if (!t.wants_grad(x, grads)) return;
      Real* dX = t.grad_slot(x, grads).data.data();
      for (long i = 0; i < og.size(); ++i) dX[(*argmax)[static_cast<size_t>(i)]] += og[i];
    };
    return push_op("maxpool2d", {x}, fwd, bwd);
  }

  /// Per-channel affine out = a[c] * x + b[c] over the last axis.
  /// Implements frozen batch-norm and bias addition.
  NodeId chan_affine(NodeId x, NodeId a, NodeId b) {
    const Tensor<Real>& vx = value(x);
    const Tensor<Real>& va = value(a);
    const Tensor<Real>& vb = value(b);
    const long C = vx.shape.back();
    if (va.shape != Shape{C} || vb.shape != Shape{C}) {
      throw ShapeError("chan_affine: coefficients " + shape_str(va.shape) + "," + shape_str(vb.shape) +
                       " do not match channel count of " + shape_str(vx.shape));
    }
    const long rows = vx.size() / C;
    auto fwd = [=](Tape& t, Tensor<Real>& out) {
      if (out.shape.empty()) out = Tensor<Real>(t.value(x).shape);
      const Real* X = t.value(x).data.data();
      const Real* A = t.value(a).data.data();
      const Real* B = t.value(b).data.data();
      Real* O = out.data.data();
      for (long r = 0; r < rows; ++r) {
        const Real* xr = X + r * C;
        Real* orow = O + r * C;
        for (long c = 0; c < C; ++c) orow[c] = A[c] * xr[c] + B[c];
      }
    };
    auto bwd = [=](Tape& t, const Tensor<Real>& og, std::vector<Tensor<Real>>& grads) {
      const Real* X = t.value(x).data.data();
      const Real* A = t.value(a).data.data();
      const Real* G = og.data.data();
      const bool wx = t.wants_grad(x, grads);
      const bool wa = t.wants_grad(a, grads);
      const bool wb = t.wants_grad(b, grads);
      Real* dX = wx ? t.grad_slot(x, grads).data.data() : nullptr;
      Real* dA = wa ? t.grad_slot(a, grads).data.data() : nullptr;
      Real* dB = wb ? t.grad_slot(b, grads).data.data() : nullptr;
      for (long r = 0; r < rows; ++r) {
        const Real* g = G + r * C;
        const Real* xr = X + r * C;
        for (long c = 0; c < C; ++c) {
          if (wx) dX[r * C + c] += g[c] * A[c];
          if (wa) dA[c] += g[c] * xr[c];
          if (wb) dB[c] += g[c];
        }
      }
    };
    return push_op("chan_affine", {x, a, b}, fwd, bwd);
  }

  // ---- reductions and data movement --------------------------------------

  NodeId reduce_sum(NodeId x, std::vector<int> axes) { return reduce_impl("reduce_sum", x, std::move(axes), false); }
  NodeId reduce_mean(NodeId x, std::vector<int> axes) { return reduce_impl("reduce_mean", x, std::move(axes), true); }

  NodeId sum_all(NodeId x) {
    std::vector<int> axes(static_cast<size_t>(value(x).rank()));
    for (size_t i = 0; i < axes.size(); ++i) axes[i] = static_cast<int>(i);
    return reduce_sum(x, axes);
  }

  NodeId concat(const std::vector<NodeId>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const Tensor<Real>& first = value(parts[0]);
    const long r = first.rank();
    if (axis < 0 || axis >= r) throw ShapeError("concat: axis out of range");
    Shape out_shape = first.shape;
    out_shape[static_cast<size_t>(axis)] = 0;
    for (NodeId p : parts) {
      const Tensor<Real>& v = value(p);
      if (v.rank() != r) throw ShapeError("concat: rank mismatch " + shape_str(v.shape));
      for (long d = 0; d < r; ++d) {
        if (d == axis) continue;
        if (v.shape[static_cast<size_t>(d)] != first.shape[static_cast<size_t>(d)]) {
          throw ShapeError("concat: shape mismatch " + shape_str(v.shape) + " vs " + shape_str(first.shape));
        }
      }
      out_shape[static_cast<size_t>(axis)] += v.shape[static_cast<size_t>(axis)];
    }
    long outer = 1, inner = 1;
    for (long d = 0; d < axis; ++d) outer *= first.shape[static_cast<size_t>(d)];
    for (long d = axis + 1; d < r; ++d) inner *= first.shape[static_cast<size_t>(d)];
    const long axis_total = out_shape[static_cast<size_t>(axis)];
    std::vector<NodeId> inputs = parts;
    auto fwd = [=](Tape& t, Tensor<Real>& out) {
      if (out.shape.empty()) out = Tensor<Real>(out_shape);
      Real* O = out.data.data();
      long axis_off = 0;
      for (NodeId p : inputs) {
        const Tensor<Real>& v = t.value(p);
        const long ax = v.shape[static_cast<size_t>(axis)];
        const Real* src = v.data.data();
        for (long o = 0; o < outer; ++o) {
          std::copy(src + o * ax * inner, src + (o + 1) * ax * inner,
                    O + (o * axis_total + axis_off) * inner);
        }
        axis_off += ax;
      }
    };
    auto bwd = [=](Tape& t, const Tensor<Real>& og, std::vector<Tensor<Real>>& grads) {
      const Real* G = og.data.data();
      long axis_off = 0;
      for (NodeId p : inputs) {
        const long ax = t.value(p).shape[static_cast<size_t>(axis)];
        if (t.wants_grad(p, grads)) {
          Real* dst = t.grad_slot(p, grads).data.data();
          for (long o = 0; o < outer; ++o) {
            const Real* g = G + (o * axis_total + axis_off) * inner;
            Real* d = dst + o * ax * inner;
            for (long i = 0; i < ax * inner; ++i) d[i] += g[i];
          }
        }
        axis_off += ax;
      }
    };
    return push_op("concat", inputs, fwd, bwd);
  }

  /// Strided frame extraction from a 1-D signal: out(t, i) = x(t*hop + i).
  NodeId frame_gather(NodeId x, long win, long hop) {
    const Tensor<Real>& vx = value(x);
    if (vx.rank() != 1) throw ShapeError("frame_gather: expected 1-D input, got " + shape_str(vx.shape));
    if (win < 1 || hop < 1) throw ShapeError("frame_gather: window and hop must be positive");
    const long N = vx.shape[0];
    if (N < win) {
      throw ShapeError("frame_gather: input length " + std::to_string(N) + " shorter than window " +
                       std::to_string(win));
    }
    const long T = (N - win) / hop + 1;
    auto fwd = [=](Tape& t, Tensor<Real>& out) {
      if (out.shape.empty()) out = Tensor<Real>(Shape{T, win});
      const Real* X = t.value(x).data.data();
      Real* O = out.data.data();
      for (long tt = 0; tt < T; ++tt) std::copy(X + tt * hop, X + tt * hop + win, O + tt * win);
    };
    auto bwd = [=](Tape& t, const Tensor<Real>& og, std::vector<Tensor<Real>>& grads) {
      if (!t.wants_grad(x, grads)) return;
      Real* dX = t.grad_slot(x, grads).data.data();
      const Real* G = og.data.data();
      for (long tt = 0; tt < T; ++tt) {
        Real* d = dX + tt * hop;
        const Real* g = G + tt * win;
        for (long i = 0; i < win; ++i) d[i] += g[i];
      }
    };
    return push_op("frame_gather", {x}, fwd, bwd);
  }

  /// Convolution over the time axis of a T x C matrix with a fixed odd-length
  /// kernel; sequence edges replicate the boundary rows.
  NodeId time_conv(NodeId x, std::vector<Real> kernel) {
    const Tensor<Real>& vx = value(x);
    if (vx.rank() != 2) throw ShapeError("time_conv: expected rank-2 input, got " + shape_str(vx.shape));
    if (kernel.size() % 2 == 0) throw ShapeError("time_conv: kernel length must be odd");
    const long T = vx.shape[0], C = vx.shape[1];
    const long r = static_cast<long>(kernel.size()) / 2;
    auto ker = std::make_shared<std::vector<Real>>(std::move(kernel));
    auto clampt = [T](long t) { return std::min(std::max(t, 0L), T - 1); };
    auto fwd = [=](Tape& t, Tensor<Real>& out) {
      if (out.shape.empty()) out = Tensor<Real>(Shape{T, C});
      const Real* X = t.value(x).data.data();
      Real* O = out.data.data();
      std::fill(out.data.begin(), out.data.end(), Real(0));
      for (long tt = 0; tt < T; ++tt) {
        Real* o = O + tt * C;
        for (long j = -r; j <= r; ++j) {
          const Real kv = (*ker)[static_cast<size_t>(j + r)];
          if (kv == Real(0)) continue;
          const Real* xr = X + clampt(tt + j) * C;
          for (long c = 0; c < C; ++c) o[c] += kv * xr[c];
        }
      }
    };
    auto bwd = [=](Tape& t, const Tensor<Real>& og, std::vector<Tensor<Real>>& grads) {
      if (!t.wants_grad(x, grads)) return;
      Real* dX = t.grad_slot(x, grads).data.data();
      const Real* G = og.data.data();
      for (long tt = 0; tt < T; ++tt) {
        const Real* g = G + tt * C;
        for (long j = -r; j <= r; ++j) {
          const Real kv = (*ker)[static_cast<size_t>(j + r)];
          if (kv == Real(0)) continue;
          Real* d = dX + clampt(tt + j) * C;
          for (long c = 0; c < C; ++c) d[c] += kv * g[c];
        }
      }
    };
    return push_op("time_conv", {x}, fwd, bwd);
  }

  NodeId reshape(NodeId x, Shape new_shape) {
    const Tensor<Real>& vx = value(x);
    if (shape_numel(new_shape) != vx.size()) {
      throw ShapeError("reshape: cannot view " + shape_str(vx.shape) + " as " + shape_str(new_shape));
    }
    auto fwd = [x, new_shape](Tape& t, Tensor<Real>& out) {
      out.shape = new_shape;
      out.data = t.value(x).data;
    };
    auto bwd = [x](Tape& t, const Tensor<Real>& og, std::vector<Tensor<Real>>& grads) {
      if (!t.wants_grad(x, grads)) return;
      Tensor<Real>& dx = t.grad_slot(x, grads);
      for (long i = 0; i < og.size(); ++i) dx[i] += og[i];
    };
    return push_op("reshape", {x}, fwd, bwd);
  }

  /// Pads a T x N matrix with zero columns on the right up to `to_cols`.
  NodeId pad_cols(NodeId x, long to_cols) {
    const Tensor<Real>& vx = value(x);
    if (vx.rank() != 2) throw ShapeError("pad_cols: expected rank-2 input, got " + shape_str(vx.shape));
    const long T = vx.shape[0], N = vx.shape[1];
    if (to_cols < N) throw ShapeError("pad_cols: target width below input width");
    auto fwd = [=](Tape& t, Tensor<Real>& out) {
      if (out.shape.empty()) out = Tensor<Real>(Shape{T, to_cols});
      const Real* X = t.value(x).data.data();
      Real* O = out.data.data();
      std::fill(out.data.begin(), out.data.end(), Real(0));
      for (long tt = 0; tt < T; ++tt) std::copy(X + tt * N, X + (tt + 1) * N, O + tt * to_cols);
    };
    auto bwd = [=](Tape& t, const Tensor<Real>& og, std::vector<Tensor<Real>>& grads) {
      if (!t.wants_grad(x, grads)) return;
      Real* dX = t.grad_slot(x, grads).data.data();
      const Real* G = og.data.data();
      for (long tt = 0; tt < T; ++tt) {
        for (long i = 0; i < N; ++i) dX[tt * N + i] += G[tt * to_cols + i];
      }
    };
    return push_op("pad_cols", {x}, fwd, bwd);
  }

  // ---- extension point ---------------------------------------------------

  /// Records an operation whose forward and backward are supplied by the
  /// caller; used for the fused loss kernels and the sequence loss.
  NodeId custom(std::string op, std::vector<NodeId> inputs,
                std::function<void(Tape&, Tensor<Real>&)> forward,
                std::function<void(Tape&, const Tensor<Real>&, std::vector<Tensor<Real>>&)> backward) {
    return push_op(std::move(op), std::move(inputs), std::move(forward), std::move(backward));
  }

  /// Generic dispatcher for operators that take no parameters beyond their
  /// inputs. Unknown operator ids are rejected.
  NodeId record(const std::string& op, const std::vector<NodeId>& inputs) {
    auto need = [&](size_t n) {
      if (inputs.size() != n) {
        throw ShapeError("record: operator '" + op + "' expects " + std::to_string(n) + " inputs, got " +
                         std::to_string(inputs.size()));
      }
    };
    if (op == "add") { need(2); return add(inputs[0], inputs[1]); }
    if (op == "sub") { need(2); return sub(inputs[0], inputs[1]); }
    if (op == "mul") { need(2); return mul(inputs[0], inputs[1]); }
    if (op == "div") { need(2); return div(inputs[0], inputs[1]); }
    if (op == "square") { need(1); return square(inputs[0]); }
    if (op == "sqrt") { need(1); return sqrt(inputs[0]); }
    if (op == "log") { need(1); return log(inputs[0]); }
    if (op == "exp") { need(1); return exp(inputs[0]); }
    if (op == "relu") { need(1); return relu(inputs[0]); }
    if (op == "matmul") { need(2); return matmul(inputs[0], inputs[1]); }
    throw std::invalid_argument("record: unsupported operator '" + op + "'");
  }

  // ---- backward ----------------------------------------------------------

  /// Reverse accumulation from a scalar loss node. Returns gradients for
  /// every variable; variables the loss does not depend on get zeros.
  GradientMap<Real> backward(NodeId loss) {
    const Tensor<Real>& lv = value(loss);
    if (lv.size() != 1) {
      throw std::invalid_argument("backward: loss node must be scalar, got shape " + shape_str(lv.shape));
    }
    std::vector<Tensor<Real>> grads(nodes_.size());
    grads[static_cast<size_t>(loss)] = Tensor<Real>(lv.shape, Real(1));
    for (NodeId id = loss; id >= 0; --id) {
      Tensor<Real>& g = grads[static_cast<size_t>(id)];
      if (g.data.empty()) continue;
      Node& n = nodes_[static_cast<size_t>(id)];
      if (n.backward) n.backward(*this, g, grads);
      if (!is_variable_[static_cast<size_t>(id)]) g = Tensor<Real>();  // release intermediates
    }
    GradientMap<Real> out;
    for (NodeId v : variables_) {
      Tensor<Real>& g = grads[static_cast<size_t>(v)];
      if (g.data.empty()) g = Tensor<Real>(nodes_[static_cast<size_t>(v)].value.shape, Real(0));
      out.grads.emplace(v, std::move(g));
    }
    return out;
  }

  // Helpers available to op closures. A node wants a gradient only when a
  // variable is somewhere beneath it; constant subtrees are skipped entirely.
  bool wants_grad(NodeId id, std::vector<Tensor<Real>>& grads) const {
    (void)grads;
    return needs_grad_[static_cast<size_t>(id)] != 0;
  }

  Tensor<Real>& grad_slot(NodeId id, std::vector<Tensor<Real>>& grads) {
    Tensor<Real>& g = grads[static_cast<size_t>(id)];
    if (g.data.empty()) g = Tensor<Real>(nodes_[static_cast<size_t>(id)].value.shape, Real(0));
    return g;
  }

private:
  struct Node {
    std::string op;
    std::vector<NodeId> inputs;
    Tensor<Real> value;
    std::function<void(Tape&, Tensor<Real>&)> forward;
    std::function<void(Tape&, const Tensor<Real>&, std::vector<Tensor<Real>>&)> backward;
  };

  Node& node(NodeId id) { return nodes_.at(static_cast<size_t>(id)); }
  const Node& node(NodeId id) const { return nodes_.at(static_cast<size_t>(id)); }

  NodeId push_leaf(Tensor<Real> value, bool is_var) {
    Node n;
    n.op = is_var ? "variable" : "constant";
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    is_variable_.push_back(is_var);
    needs_grad_.push_back(is_var);
    const NodeId id = static_cast<NodeId>(nodes_.size() - 1);
    if (is_var) variables_.push_back(id);
    return id;
  }

  NodeId push_op(std::string op, std::vector<NodeId> inputs,
                 std::function<void(Tape&, Tensor<Real>&)> fwd,
                 std::function<void(Tape&, const Tensor<Real>&, std::vector<Tensor<Real>>&)> bwd) {
    char ng = 0;
    for (NodeId in : inputs) ng |= needs_grad_.at(static_cast<size_t>(in));
    Node n;
    n.op = std::move(op);
    n.inputs = std::move(inputs);
    n.forward = std::move(fwd);
    n.backward = std::move(bwd);
    n.forward(*this, n.value);
    nodes_.push_back(std::move(n));
    is_variable_.push_back(false);
    needs_grad_.push_back(ng);
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  template <typename FwdFn, typename BwdFn>
  NodeId unary(const char* name, NodeId a, FwdFn f, BwdFn df) {
    auto fwd = [a, f](Tape& t, Tensor<Real>& out) {
      const Tensor<Real>& va = t.value(a);
      if (out.shape.empty()) out = Tensor<Real>(va.shape);
      for (long i = 0; i < va.size(); ++i) out[i] = f(va[i]);
    };
    NodeId id_pending = static_cast<NodeId>(nodes_.size());
    auto bwd = [a, df, id_pending](Tape& t, const Tensor<Real>& og, std::vector<Tensor<Real>>& grads) {
      if (!t.wants_grad(a, grads)) return;
      df(og, t.grad_slot(a, grads), t.value(a), t.value(id_pending));
    };
    return push_op(name, {a}, fwd, bwd);
  }

  template <typename FwdFn, typename BwdFn>
  NodeId binary_elementwise(const char* name, NodeId a, NodeId b, FwdFn f, BwdFn df) {
    const Tensor<Real>& va = value(a);
    const Tensor<Real>& vb = value(b);
    if (va.shape != vb.shape) {
      throw ShapeError(std::string(name) + ": shape mismatch " + shape_str(va.shape) + " vs " +
                       shape_str(vb.shape));
    }
    auto fwd = [a, b, f](Tape& t, Tensor<Real>& out) {
      const Tensor<Real>& x = t.value(a);
      const Tensor<Real>& y = t.value(b);
      if (out.shape.empty()) out = Tensor<Real>(x.shape);
      for (long i = 0; i < x.size(); ++i) out[i] = f(x[i], y[i]);
    };
    auto bwd = [a, b, df](Tape& t, const Tensor<Real>& og, std::vector<Tensor<Real>>& grads) {
      Tensor<Real>* da = t.wants_grad(a, grads) ? &t.grad_slot(a, grads) : nullptr;
      Tensor<Real>* db = t.wants_grad(b, grads) ? &t.grad_slot(b, grads) : nullptr;
      df(t, og, da, db, t.value(a), t.value(b));
    };
    return push_op(name, {a, b}, fwd, bwd);
  }

  NodeId reduce_impl(const char* name, NodeId x, std::vector<int> axes, bool mean) {
    const Tensor<Real>& vx = value(x);
    const long r = vx.rank();
    std::vector<char> reduced(static_cast<size_t>(r), 0);
    for (int ax : axes) {
      if (ax < 0 || ax >= r) throw ShapeError(std::string(name) + ": axis out of range for " + shape_str(vx.shape));
      reduced[static_cast<size_t>(ax)] = 1;
    }
    Shape out_shape;
    long count = 1;
    for (long d = 0; d < r; ++d) {
      if (reduced[static_cast<size_t>(d)]) {
        count *= vx.shape[static_cast<size_t>(d)];
      } else {
        out_shape.push_back(vx.shape[static_cast<size_t>(d)]);
      }
    }
    if (out_shape.empty()) out_shape = Shape{1};
    const Real scale = mean ? Real(1) / static_cast<Real>(count) : Real(1);
    // Per-axis output strides; zero stride for reduced axes.
    Shape in_shape = vx.shape;
    std::vector<long> out_stride(static_cast<size_t>(r), 0);
    {
      long stride = 1;
      for (long d = r - 1; d >= 0; --d) {
        if (!reduced[static_cast<size_t>(d)]) {
          out_stride[static_cast<size_t>(d)] = stride;
          stride *= in_shape[static_cast<size_t>(d)];
        }
      }
    }
    auto fwd = [=](Tape& t, Tensor<Real>& out) {
      if (out.shape.empty()) out = Tensor<Real>(out_shape);
      std::fill(out.data.begin(), out.data.end(), Real(0));
      const Tensor<Real>& v = t.value(x);
      std::vector<long> idx(static_cast<size_t>(r), 0);
      long out_ix = 0;
      for (long i = 0; i < v.size(); ++i) {
        out[out_ix] += v[i] * scale;
        for (long d = r - 1; d >= 0; --d) {
          idx[static_cast<size_t>(d)]++;
          out_ix += out_stride[static_cast<size_t>(d)];
          if (idx[static_cast<size_t>(d)] < in_shape[static_cast<size_t>(d)]) break;
          idx[static_cast<size_t>(d)] = 0;
          out_ix -= out_stride[static_cast<size_t>(d)] * in_shape[static_cast<size_t>(d)];
        }
      }
    };
    auto bwd = [=](Tape& t, const Tensor<Real>& og, std::vector<Tensor<Real>>& grads) {
      if (!t.wants_grad(x, grads)) return;
      Tensor<Real>& dx = t.grad_slot(x, grads);
      std::vector<long> idx(static_cast<size_t>(r), 0);
      long out_ix = 0;
      for (long i = 0; i < dx.size(); ++i) {
        dx[i] += og[out_ix] * scale;
        for (long d = r - 1; d >= 0; --d) {
          idx[static_cast<size_t>(d)]++;
          out_ix += out_stride[static_cast<size_t>(d)];
          if (idx[static_cast<size_t>(d)] < in_shape[static_cast<size_t>(d)]) break;
          idx[static_cast<size_t>(d)] = 0;
          out_ix -= out_stride[static_cast<size_t>(d)] * in_shape[static_cast<size_t>(d)];
        }
      }
    };
    return push_op(name, {x}, fwd, bwd);
  }

  std::vector<Node> nodes_;
  std::vector<char> is_variable_;
  std::vector<char> needs_grad_;
  std::vector<NodeId> variables_;
};

}  // namespace gramsynth
