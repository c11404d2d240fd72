// Copyright (c) 2026 The gramsynth authors
// SPDX-License-Identifier: Apache-2.0
//
// Time-stationary Gram statistics and the weighted synthesis loss:
// style terms match Gram tensors, content terms match activations directly,
// and an optional energy penalty tracks per-frame log-filterbank sums.
//
// The style term is a fused tape op. Its forward pass walks the Gram
// blockwise over channel-pair (i, j) without materializing the generated
// Gram, and the backward pass recomputes each block. This keeps peak memory
// at O(D^2) per block even for wide layers.

#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "gramsynth/network.hpp"
#include "gramsynth/tape.hpp"
#include "gramsynth/tensor.hpp"

namespace gramsynth {

/// Uncentered correlations over time: values[i,j,k,l] = (1/T) sum_t
/// C[t,i,k] * C[t,j,l] for an activation tensor C of shape T x F x D.
/// Symmetry values[i,j,k,l] == values[j,i,l,k] holds bit-exactly because
/// both entries accumulate the identical products in the same order.
template <typename Real>
struct GramTensor {
  Tensor<Real> values;  // F x F x D x D
  long frame_count = 0;
};

namespace detail {

// Accumulates T frames of outer products into g (layout F x F x D x D)
// without the 1/T scale; shared by the single and pooled builders.
template <typename Real>
void accumulate_gram(const Tensor<Real>& act, Tensor<Real>& g) {
  const long T = act.shape[0], F = act.shape[1], D = act.shape[2];
  const Real* C = act.data.data();
  Real* G = g.data.data();
  for (long t = 0; t < T; ++t) {
    const Real* frame = C + t * F * D;
    for (long i = 0; i < F; ++i) {
      for (long k = 0; k < D; ++k) {
        const Real cik = frame[i * D + k];
        if (cik == Real(0)) continue;
        Real* row = G + ((i * F) * D + k) * D;  // start of [i, 0, k, :]
        for (long j = 0; j < F; ++j) {
          const Real* cj = frame + j * D;
          Real* dst = row + j * D * D;
          for (long l = 0; l < D; ++l) dst[l] += cik * cj[l];
        }
      }
    }
  }
}

}  // namespace detail

template <typename Real>
GramTensor<Real> gram_tensor(const Tensor<Real>& act) {
  if (act.rank() != 3) throw ShapeError("gram_tensor: expected T x F x D, got " + shape_str(act.shape));
  const long T = act.shape[0], F = act.shape[1], D = act.shape[2];
  GramTensor<Real> out;
  out.frame_count = T;
  out.values = Tensor<Real>(Shape{F, F, D, D}, Real(0));
  detail::accumulate_gram(act, out.values);
  const Real scale = Real(1) / static_cast<Real>(T);
  for (long i = 0; i < out.values.size(); ++i) out.values[i] *= scale;
  return out;
}

/// Image-style Gram matrix, averaging over both spatial axes:
/// G[i,j] = (1/(W*H)) sum_{w,h} C[w,h,i] * C[w,h,j].
template <typename Real>
Tensor<Real> gram_matrix_image(const Tensor<Real>& act) {
  if (act.rank() != 3) throw ShapeError("gram_matrix_image: expected W x H x D, got " + shape_str(act.shape));
  const long W = act.shape[0], H = act.shape[1], D = act.shape[2];
  Tensor<Real> g(Shape{D, D}, Real(0));
  for (long w = 0; w < W; ++w) {
    for (long h = 0; h < H; ++h) {
      const Real* c = act.data.data() + (w * H + h) * D;
      for (long i = 0; i < D; ++i) {
        for (long j = 0; j < D; ++j) g.at2(i, j) += c[i] * c[j];
      }
    }
  }
  const Real scale = Real(1) / static_cast<Real>(W * H);
  for (long i = 0; i < g.size(); ++i) g[i] *= scale;
  return g;
}

/// Gram statistics pooled over the concatenated frames of several
/// utterances; longer utterances weigh proportionally more.
template <typename Real>
GramTensor<Real> pooled_style_gram(const std::vector<Tensor<Real>>& utterances) {
  if (utterances.empty()) throw std::invalid_argument("pooled_style_gram: no utterances");
  const Tensor<Real>& first = utterances.front();
  if (first.rank() != 3) throw ShapeError("pooled_style_gram: expected T x F x D tensors");
  const long F = first.shape[1], D = first.shape[2];
  GramTensor<Real> out;
  out.values = Tensor<Real>(Shape{F, F, D, D}, Real(0));
  for (const Tensor<Real>& u : utterances) {
    if (u.rank() != 3 || u.shape[1] != F || u.shape[2] != D) {
      throw ShapeError("pooled_style_gram: mismatched activation shape " + shape_str(u.shape));
    }
    detail::accumulate_gram(u, out.values);
    out.frame_count += u.shape[0];
  }
  const Real scale = Real(1) / static_cast<Real>(out.frame_count);
  for (long i = 0; i < out.values.size(); ++i) out.values[i] *= scale;
  return out;
}

// ---- loss specification ----------------------------------------------------

enum class LossRole { Style, Content };

struct LossTerm {
  std::string layer;
  LossRole role = LossRole::Style;
  double weight = 0.0;
};

struct LossSpec {
  std::vector<LossTerm> terms;
  double energy_weight = 0.0;

  /// Style on the first six conv layers. Texture synthesis has no content
  /// reference, so neither content terms nor the energy penalty apply.
  static LossSpec texture_defaults(const NetworkSpec& net) {
    LossSpec s;
    long conv_seen = 0;
    for (const auto& l : net.layers) {
      if (l.kind == LayerKind::Conv && conv_seen < 6) {
        s.terms.push_back({l.name, LossRole::Style, 1e5});
        conv_seen++;
      }
    }
    s.validate();
    return s;
  }

  /// Style on the first six convs, content on any deeper convs and on the
  /// fully-connected layers, plus the frame-energy penalty.
  static LossSpec voice_conversion_defaults(const NetworkSpec& net) {
    LossSpec s;
    long conv_seen = 0;
    for (const auto& l : net.layers) {
      if (l.kind == LayerKind::Conv) {
        if (conv_seen < 6) {
          s.terms.push_back({l.name, LossRole::Style, 1e5});
        } else {
          s.terms.push_back({l.name, LossRole::Content, 0.2});
        }
        conv_seen++;
      } else if (l.kind == LayerKind::FullyConnected) {
        s.terms.push_back({l.name, LossRole::Content, 10.0});
      }
    }
    s.energy_weight = 1.0;
    s.validate();
    return s;
  }

  const LossTerm* find(const std::string& layer) const {
    for (const auto& t : terms) {
      if (t.layer == layer) return &t;
    }
    return nullptr;
  }

  void validate() const {
    std::map<std::string, int> seen;
    for (const auto& t : terms) {
      if (t.weight < 0) throw ParseError("loss spec: negative weight for layer " + t.layer);
      if (++seen[t.layer] > 1) throw ParseError("loss spec: layer " + t.layer + " listed twice");
    }
    if (energy_weight < 0) throw ParseError("loss spec: negative energy weight");
  }
};

// ---- tape nodes ------------------------------------------------------------

/// weight * ||gram(act) - target||^2 / numel(target) as one fused node.
/// The target must satisfy the Gram symmetry invariant; the backward pass
/// relies on it to fold the two gradient sums into one.
template <typename Real>
NodeId gram_sqdiff_node(Tape<Real>& tape, NodeId act, GramTensor<Real> target, double weight) {
  const Tensor<Real>& a = tape.value(act);
  if (a.rank() != 3) throw ShapeError("gram_sqdiff: activations must be T x F x D, got " + shape_str(a.shape));
  const long F = a.shape[1], D = a.shape[2];
  if (target.values.shape != Shape{F, F, D, D}) {
    throw ShapeError("gram_sqdiff: target " + shape_str(target.values.shape) + " does not match activations " +
                     shape_str(a.shape));
  }
  auto tgt = std::make_shared<Tensor<Real>>(std::move(target.values));
  const double norm = static_cast<double>(F) * F * D * D;

  auto fwd = [act, tgt, F, D, norm, weight](Tape<Real>& t, Tensor<Real>& out) {
    const Tensor<Real>& av = t.value(act);
    const long T = av.shape[0];
    const Real* C = av.data.data();
    const Real inv_t = Real(1) / static_cast<Real>(T);
    std::vector<Real> block(static_cast<size_t>(D * D));
    double acc = 0.0;
    for (long i = 0; i < F; ++i) {
      for (long j = 0; j < F; ++j) {
        std::fill(block.begin(), block.end(), Real(0));
        for (long s = 0; s < T; ++s) {
          const Real* ci = C + (s * F + i) * D;
          const Real* cj = C + (s * F + j) * D;
          for (long k = 0; k < D; ++k) {
            const Real cik = ci[k];
            if (cik == Real(0)) continue;
            Real* row = block.data() + k * D;
            for (long l = 0; l < D; ++l) row[l] += cik * cj[l];
          }
        }
        const Real* ref = tgt->data.data() + (i * F + j) * D * D;
        for (long e = 0; e < D * D; ++e) {
          const double d = static_cast<double>(block[static_cast<size_t>(e)] * inv_t - ref[e]);
          acc += d * d;
        }
      }
    }
    out = Tensor<Real>::scalar(static_cast<Real>(weight * acc / norm));
  };

  auto bwd = [act, tgt, F, D, norm, weight](Tape<Real>& t, const Tensor<Real>& og,
                                            std::vector<Tensor<Real>>& grads) {
    if (!t.wants_grad(act, grads)) return;
    const Tensor<Real>& av = t.value(act);
    const long T = av.shape[0];
    const Real* C = av.data.data();
    Real* dC = t.grad_slot(act, grads).data.data();
    const Real inv_t = Real(1) / static_cast<Real>(T);
    // d loss / dC[t,a,b] = (4w / (norm * T)) * sum_{j,l} delta[a,j,b,l] * C[t,j,l]
    // using the symmetry of both Grams to merge the (a,.) and (.,a) sums.
    const Real coef = static_cast<Real>(static_cast<double>(og[0]) * 4.0 * weight / (norm * T));
    std::vector<Real> block(static_cast<size_t>(D * D));
    for (long i = 0; i < F; ++i) {
      for (long j = 0; j < F; ++j) {
        std::fill(block.begin(), block.end(), Real(0));
        for (long s = 0; s < T; ++s) {
          const Real* ci = C + (s * F + i) * D;
          const Real* cj = C + (s * F + j) * D;
          for (long k = 0; k < D; ++k) {
            const Real cik = ci[k];
            if (cik == Real(0)) continue;
            Real* row = block.data() + k * D;
            for (long l = 0; l < D; ++l) row[l] += cik * cj[l];
          }
        }
        const Real* ref = tgt->data.data() + (i * F + j) * D * D;
        for (long e = 0; e < D * D; ++e) block[static_cast<size_t>(e)] = block[static_cast<size_t>(e)] * inv_t - ref[e];
        for (long s = 0; s < T; ++s) {
          const Real* cj = C + (s * F + j) * D;
          Real* di = dC + (s * F + i) * D;
          for (long b = 0; b < D; ++b) {
            const Real* row = block.data() + b * D;
            Real sum = Real(0);
            for (long l = 0; l < D; ++l) sum += row[l] * cj[l];
            di[b] += coef * sum;
          }
        }
      }
    }
  };
  return tape.custom("gram_sqdiff", {act}, std::move(fwd), std::move(bwd));
}

/// weight * ||act - ref||^2 / numel(ref), composed from elementwise ops.
template <typename Real>
NodeId activation_sqdiff_node(Tape<Real>& tape, NodeId act, const Tensor<Real>& ref, double weight) {
  const Tensor<Real>& a = tape.value(act);
  if (a.shape != ref.shape) {
    throw ShapeError("activation_sqdiff: generated " + shape_str(a.shape) + " vs reference " +
                     shape_str(ref.shape));
  }
  const NodeId diff = tape.sub(act, tape.constant(ref));
  const NodeId ss = tape.sum_all(tape.square(diff));
  return tape.mul_scalar(ss, static_cast<Real>(weight / static_cast<double>(ref.size())));
}

/// Per-frame energy of a T x C static log-filterbank matrix: row sums.
template <typename Real>
Tensor<Real> frame_energy(const Tensor<Real>& log_mel) {
  if (log_mel.rank() != 2) throw ShapeError("frame_energy: expected T x C, got " + shape_str(log_mel.shape));
  Tensor<Real> e(Shape{log_mel.shape[0]}, Real(0));
  for (long t = 0; t < log_mel.shape[0]; ++t) {
    for (long c = 0; c < log_mel.shape[1]; ++c) e[t] += log_mel.at2(t, c);
  }
  return e;
}

/// weight * (1/T) * sum_t (E_gen(t) - E_ref(t))^2 where E sums the static
/// log-filterbank channels of each frame.
template <typename Real>
NodeId energy_penalty_node(Tape<Real>& tape, NodeId log_mel, const Tensor<Real>& energy_ref, double weight) {
  const Tensor<Real>& lm = tape.value(log_mel);
  if (lm.rank() != 2) throw ShapeError("energy_penalty: log-mel must be T x C, got " + shape_str(lm.shape));
  if (energy_ref.shape != Shape{lm.shape[0]}) {
    throw ShapeError("energy_penalty: reference energies " + shape_str(energy_ref.shape) +
                     " do not match " + std::to_string(lm.shape[0]) + " frames");
  }
  const NodeId e_gen = tape.reduce_sum(log_mel, {1});
  const NodeId diff = tape.sub(e_gen, tape.constant(energy_ref));
  const NodeId mean_sq = tape.reduce_mean(tape.square(diff), {0});
  return tape.mul_scalar(mean_sq, static_cast<Real>(weight));
}

// ---- total loss ------------------------------------------------------------

template <typename Real>
struct LossTargets {
  std::map<std::string, GramTensor<Real>> style_grams;
  std::map<std::string, Tensor<Real>> content_refs;
  Tensor<Real> energy_ref;  // {T}; required when the spec's energy weight > 0
};

template <typename Real>
struct LossNodes {
  NodeId total = -1;
  NodeId style = -1;    // weighted sum of style terms, or -1 when absent
  NodeId content = -1;
  NodeId energy = -1;
  std::map<std::string, NodeId> per_layer;
};

/// Assembles the weighted total loss over recorded activations. Terms are
/// summed in spec order, then the energy penalty; the fixed order keeps
/// replays bit-reproducible.
template <typename Real>
LossNodes<Real> total_loss_node(Tape<Real>& tape, const std::map<std::string, NodeId>& activations,
                                NodeId log_mel, const LossSpec& spec, const LossTargets<Real>& targets) {
  spec.validate();
  LossNodes<Real> out;
  for (const auto& term : spec.terms) {
    auto it = activations.find(term.layer);
    if (it == activations.end()) {
      throw ParseError("total_loss: no recorded activations for layer " + term.layer);
    }
    NodeId node = -1;
    if (term.role == LossRole::Style) {
      auto g = targets.style_grams.find(term.layer);
      if (g == targets.style_grams.end()) throw ParseError("total_loss: no style Gram for layer " + term.layer);
      node = gram_sqdiff_node(tape, it->second, g->second, term.weight);
      out.style = (out.style < 0) ? node : tape.add(out.style, node);
    } else {
      auto r = targets.content_refs.find(term.layer);
      if (r == targets.content_refs.end()) throw ParseError("total_loss: no content reference for layer " + term.layer);
      node = activation_sqdiff_node(tape, it->second, r->second, term.weight);
      out.content = (out.content < 0) ? node : tape.add(out.content, node);
    }
    out.per_layer[term.layer] = node;
    out.total = (out.total < 0) ? node : tape.add(out.total, node);
  }
  if (spec.energy_weight > 0) {
    if (log_mel < 0) throw ParseError("total_loss: energy penalty requires the log-mel node");
    out.energy = energy_penalty_node(tape, log_mel, targets.energy_ref, spec.energy_weight);
    out.total = (out.total < 0) ? out.energy : tape.add(out.total, out.energy);
  }
  if (out.total < 0) throw ParseError("total_loss: spec has no active terms");
  return out;
}

}  // namespace gramsynth
