// Copyright (c) 2026 The gramsynth authors
// SPDX-License-Identifier: Apache-2.0
//
// The convolutional CTC acoustic network: layer specs for the paper-scale
// and toy-scale variants, random initialization, and a tape-recorded forward
// pass that collects post-ReLU activations per layer.
//
// Layout conventions: activations are T x F x D (time, frequency, channels);
// fully-connected layers act per frame on the flattened F*D vector and are
// reported as T x 1 x width. Batch norm in inference mode folds the stored
// statistics into a per-channel affine; training mode normalizes with
// statistics pooled over every position of the minibatch so gradients reach
// the statistics as well as scale and shift.

#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "gramsynth/random.hpp"
#include "gramsynth/tape.hpp"
#include "gramsynth/tensor.hpp"

namespace gramsynth {

inline constexpr double kBatchNormEpsilon = 1e-5;
// Blend factor for running-statistics updates during toy training.
inline constexpr double kBatchNormMomentum = 0.1;

enum class LayerKind { Conv, FullyConnected, Output };
enum class RunMode { Inference, Training };

struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::Conv;
  long filter_time = 0;
  long filter_freq = 0;
  long out_channels = 0;  // conv channels, FC width, or vocabulary size
  long pool_time = 1;
  long pool_freq = 1;
  double dropout_keep = 1.0;
};

struct NetworkSpec {
  std::vector<LayerSpec> layers;
  long input_freq = 80;
  long input_channels = 3;
  long vocab_size = 0;

  /// The 13-layer network: ten convolutions, two fully-connected layers,
  /// and the CTC output head. Pooling factors are time x frequency.
  static NetworkSpec paper(long vocab) {
    NetworkSpec s;
    s.input_freq = 80;
    s.vocab_size = vocab;
    s.layers = {
        {"C0", LayerKind::Conv, 5, 5, 128, 2, 2, 0.75},
        {"C1", LayerKind::Conv, 5, 5, 128, 1, 2, 0.75},
        {"C2", LayerKind::Conv, 5, 3, 128, 1, 1, 0.75},
        {"C3", LayerKind::Conv, 5, 3, 256, 1, 2, 0.75},
        {"C4", LayerKind::Conv, 5, 3, 256, 1, 1, 0.75},
        {"C5", LayerKind::Conv, 5, 3, 256, 1, 1, 0.75},
        {"C6", LayerKind::Conv, 5, 3, 256, 1, 1, 0.75},
        {"C7", LayerKind::Conv, 5, 3, 256, 1, 1, 0.75},
        {"C8", LayerKind::Conv, 5, 3, 256, 1, 1, 0.75},
        {"C9", LayerKind::Conv, 5, 3, 256, 1, 1, 0.75},
        {"FC0", LayerKind::FullyConnected, 0, 0, 1024, 1, 1, 0.9},
        {"FC1", LayerKind::FullyConnected, 0, 0, 1024, 1, 1, 0.9},
        {"CTC", LayerKind::Output, 0, 0, vocab, 1, 1, 1.0},
    };
    s.validate();
    return s;
  }

  /// Desk-scale stand-in with the same layer kinds and pooling pattern:
  /// C0-C5 with channels {8,8,8,16,16,16}, one 32-wide FC, CTC head.
  /// Input is T x 20 x 3 from the 20-channel toy filterbank.
  static NetworkSpec toy(long vocab) {
    NetworkSpec s;
    s.input_freq = 20;
    s.vocab_size = vocab;
    s.layers = {
        {"C0", LayerKind::Conv, 5, 5, 8, 2, 2, 0.75},
        {"C1", LayerKind::Conv, 5, 5, 8, 1, 2, 0.75},
        {"C2", LayerKind::Conv, 5, 3, 8, 1, 1, 0.75},
        {"C3", LayerKind::Conv, 5, 3, 16, 1, 2, 0.75},
        {"C4", LayerKind::Conv, 5, 3, 16, 1, 1, 0.75},
        {"C5", LayerKind::Conv, 5, 3, 16, 1, 1, 0.75},
        {"FC0", LayerKind::FullyConnected, 0, 0, 32, 1, 1, 0.9},
        {"CTC", LayerKind::Output, 0, 0, vocab, 1, 1, 1.0},
    };
    s.validate();
    return s;
  }

  const LayerSpec* find(const std::string& name) const {
    for (const auto& l : layers) {
      if (l.name == name) return &l;
    }
    return nullptr;
  }

  void validate() const {
    if (vocab_size < 2) throw ParseError("network spec: vocabulary needs blank plus one symbol");
    std::map<std::string, int> seen;
    for (const auto& l : layers) {
      if (++seen[l.name] > 1) throw ParseError("network spec: duplicate layer name " + l.name);
      if (l.kind == LayerKind::Conv && (l.filter_time % 2 == 0 || l.filter_freq % 2 == 0)) {
        throw ParseError("network spec: layer " + l.name + " filter extents must be odd");
      }
      if (l.pool_time < 1 || l.pool_freq < 1) {
        throw ParseError("network spec: layer " + l.name + " pooling factors must be >= 1");
      }
      if (l.out_channels < 1) throw ParseError("network spec: layer " + l.name + " needs channels");
    }
    if (layers.empty() || layers.back().kind != LayerKind::Output) {
      throw ParseError("network spec: last layer must be the output head");
    }
  }
};

template <typename Real>
struct LayerWeights {
  Tensor<Real> kernel;  // conv: kt x kf x Ci x Co; fc/output: In x Out
  Tensor<Real> bias;    // {Co}
  Tensor<Real> bn_scale, bn_shift, bn_mean, bn_var;  // {Co}; unused for the output head

  template <typename Other>
  LayerWeights<Other> cast() const {
    LayerWeights<Other> out;
    out.kernel = kernel.template cast<Other>();
    out.bias = bias.template cast<Other>();
    if (!bn_scale.data.empty()) {
      out.bn_scale = bn_scale.template cast<Other>();
      out.bn_shift = bn_shift.template cast<Other>();
      out.bn_mean = bn_mean.template cast<Other>();
      out.bn_var = bn_var.template cast<Other>();
    }
    return out;
  }
};

template <typename Real>
struct WeightStore {
  std::map<std::string, LayerWeights<Real>> layers;

  LayerWeights<Real>& at(const std::string& name) {
    auto it = layers.find(name);
    if (it == layers.end()) throw ParseError("weight store: no weights for layer " + name);
    return it->second;
  }
  const LayerWeights<Real>& at(const std::string& name) const {
    return const_cast<WeightStore*>(this)->at(name);
  }

  template <typename Other>
  WeightStore<Other> cast() const {
    WeightStore<Other> out;
    for (const auto& [name, lw] : layers) out.layers[name] = lw.template cast<Other>();
    return out;
  }
};

/// Input size of a layer's kernel given the spec and the incoming shape;
/// used for both construction and He initialization.
inline long layer_fan_in(const LayerSpec& l, long in_freq, long in_channels) {
  if (l.kind == LayerKind::Conv) return l.filter_time * l.filter_freq * in_channels;
  return in_freq * in_channels;  // flattened F*D per frame
}

/// Fan-in-scaled Gaussian kernels (std = sqrt(2/fan_in)), zero biases,
/// batch-norm scale 1 / shift 0 / mean 0 / variance 1. Deterministic per seed.
template <typename Real>
WeightStore<Real> init_random(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  WeightStore<Real> store;
  Rng rng(seed);
  long freq = spec.input_freq;
  long chans = spec.input_channels;
  for (const auto& l : spec.layers) {
    LayerWeights<Real> w;
    const long fan_in = layer_fan_in(l, freq, chans);
    const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
    if (l.kind == LayerKind::Conv) {
      w.kernel = Tensor<Real>(Shape{l.filter_time, l.filter_freq, chans, l.out_channels});
    } else {
      w.kernel = Tensor<Real>(Shape{fan_in, l.out_channels});
    }
    for (long i = 0; i < w.kernel.size(); ++i) w.kernel[i] = static_cast<Real>(std_dev * rng.gaussian());
    w.bias = Tensor<Real>(Shape{l.out_channels}, Real(0));
    if (l.kind != LayerKind::Output) {
      w.bn_scale = Tensor<Real>(Shape{l.out_channels}, Real(1));
      w.bn_shift = Tensor<Real>(Shape{l.out_channels}, Real(0));
      w.bn_mean = Tensor<Real>(Shape{l.out_channels}, Real(0));
      w.bn_var = Tensor<Real>(Shape{l.out_channels}, Real(1));
    }
    store.layers[l.name] = std::move(w);
    if (l.kind == LayerKind::Conv) {
      freq /= l.pool_freq;
      chans = l.out_channels;
    } else {
      freq = 1;
      chans = l.out_channels;
    }
  }
  return store;
}

/// Handles into a recorded forward pass.
struct ForwardNodes {
  std::map<std::string, NodeId> activations;  // post-ReLU (post-pool) per layer
  NodeId logits = -1;                         // T' x V when the head was reached
  // Weight leaves by "<layer>.<array>" name; variables in training mode.
  std::map<std::string, NodeId> weight_nodes;
  // Batch statistics nodes per layer in training mode, for running updates.
  std::map<std::string, std::pair<NodeId, NodeId>> batch_stats;
};

struct ForwardOptions {
  RunMode mode = RunMode::Inference;
  std::string upto;          // stop after this layer; empty runs the whole net
  Rng* dropout_rng = nullptr;  // required in training mode when keep < 1
  // Training-mode batch norm normally normalizes by the pooled statistics of
  // the current minibatch. With frozen_stats the stored running statistics
  // are used instead (matching inference exactly) while batch statistics are
  // still recorded for running-average refreshes; useful for a fine-tuning
  // phase once the running averages have settled.
  bool frozen_stats = false;

  static ForwardOptions inference_upto(std::string layer) {
    ForwardOptions o;
    o.upto = std::move(layer);
    return o;
  }
};

/// Handles for one utterance inside a batch forward.
struct BatchItemNodes {
  std::map<std::string, NodeId> activations;  // post-ReLU (post-pool) per layer
  NodeId logits = -1;                         // T' x V when the head was reached
};

/// Handles into a batch forward: weight leaves are shared by every item, and
/// in training mode so are the batch-norm statistics.
struct BatchForwardNodes {
  std::vector<BatchItemNodes> items;
  std::map<std::string, NodeId> weight_nodes;
  std::map<std::string, std::pair<NodeId, NodeId>> batch_stats;
};

namespace detail {

// Batch norm over a minibatch of variable-length items: one mean and one
// variance per channel, pooled over every (time, frequency) position of every
// item and recorded with tape ops so gradients reach the statistics. Items
// are weighted by their position counts, which makes the result identical to
// the statistics of the concatenated batch.
template <typename Real>
void batchnorm_pooled_training(Tape<Real>& tape, const std::vector<NodeId>& z, const LayerSpec& l,
                               NodeId bn_scale, NodeId bn_shift, BatchForwardNodes& out,
                               std::vector<NodeId>& y) {
  const long C = tape.value(z.front()).shape.back();
  auto ones = tape.constant(Tensor<Real>(Shape{C}, Real(1)));
  auto reduce_axes = [&](NodeId zi) {
    std::vector<int> axes;
    for (long d = 0; d + 1 < tape.value(zi).rank(); ++d) axes.push_back(static_cast<int>(d));
    return axes;
  };
  double total = 0.0;
  for (NodeId zi : z) total += static_cast<double>(tape.value(zi).size() / C);
  auto item_weight = [&](NodeId zi) {
    return static_cast<Real>(static_cast<double>(tape.value(zi).size() / C) / total);
  };
  NodeId mean = -1;
  for (NodeId zi : z) {
    auto part = tape.mul_scalar(tape.reduce_mean(zi, reduce_axes(zi)), item_weight(zi));
    mean = mean < 0 ? part : tape.add(mean, part);
  }
  auto neg_mean = tape.mul_scalar(mean, Real(-1));
  std::vector<NodeId> centered(z.size());
  NodeId var = -1;
  for (size_t u = 0; u < z.size(); ++u) {
    centered[u] = tape.chan_affine(z[u], ones, neg_mean);
    auto part = tape.mul_scalar(tape.reduce_mean(tape.square(centered[u]), reduce_axes(z[u])),
                                item_weight(z[u]));
    var = var < 0 ? part : tape.add(var, part);
  }
  auto inv_std = tape.div(ones, tape.sqrt(tape.add_scalar(var, static_cast<Real>(kBatchNormEpsilon))));
  auto scale = tape.mul(inv_std, bn_scale);
  out.batch_stats[l.name] = {mean, var};
  y.resize(z.size());
  for (size_t u = 0; u < z.size(); ++u) y[u] = tape.chan_affine(centered[u], scale, bn_shift);
}

// Frozen-statistics variant: every item is normalized by the stored running
// mean and variance (constants in the graph) with the learnable scale and
// shift on top. The pooled batch statistics are still computed, as constant
// nodes, so callers can keep refreshing the running averages.
template <typename Real>
void batchnorm_pooled_frozen(Tape<Real>& tape, const std::vector<NodeId>& z, const LayerSpec& l,
                             const LayerWeights<Real>& w, NodeId bn_scale, NodeId bn_shift,
                             BatchForwardNodes& out, std::vector<NodeId>& y) {
  const long C = tape.value(z.front()).shape.back();
  std::vector<double> m(static_cast<size_t>(C), 0.0), v(static_cast<size_t>(C), 0.0);
  double rows = 0.0;
  for (NodeId zi : z) {
    const Tensor<Real>& zv = tape.value(zi);
    for (long i = 0; i < zv.size(); ++i) m[static_cast<size_t>(i % C)] += static_cast<double>(zv[i]);
    rows += static_cast<double>(zv.size() / C);
  }
  for (long c = 0; c < C; ++c) m[static_cast<size_t>(c)] /= rows;
  for (NodeId zi : z) {
    const Tensor<Real>& zv = tape.value(zi);
    for (long i = 0; i < zv.size(); ++i) {
      const double d = static_cast<double>(zv[i]) - m[static_cast<size_t>(i % C)];
      v[static_cast<size_t>(i % C)] += d * d;
    }
  }
  Tensor<Real> mean(Shape{C}), var(Shape{C}), a(Shape{C}), b(Shape{C});
  for (long c = 0; c < C; ++c) {
    mean[c] = static_cast<Real>(m[static_cast<size_t>(c)]);
    var[c] = static_cast<Real>(v[static_cast<size_t>(c)] / rows);
    const double inv = 1.0 / std::sqrt(static_cast<double>(w.bn_var[c]) + kBatchNormEpsilon);
    a[c] = static_cast<Real>(inv);
    b[c] = static_cast<Real>(-static_cast<double>(w.bn_mean[c]) * inv);
  }
  out.batch_stats[l.name] = {tape.constant(std::move(mean)), tape.constant(std::move(var))};
  auto an = tape.constant(std::move(a));
  auto bn = tape.constant(std::move(b));
  y.resize(z.size());
  for (size_t u = 0; u < z.size(); ++u) {
    y[u] = tape.chan_affine(tape.chan_affine(z[u], an, bn), bn_scale, bn_shift);
  }
}

template <typename Real>
NodeId record_dropout(Tape<Real>& tape, NodeId x, double keep, Rng* rng) {
  if (keep >= 1.0) return x;
  if (!rng) throw std::invalid_argument("forward_collect: training with dropout needs an rng");
  Tensor<Real> mask(tape.value(x).shape);
  const Real inv_keep = static_cast<Real>(1.0 / keep);
  for (long i = 0; i < mask.size(); ++i) mask[i] = rng->bernoulli(keep) ? inv_keep : Real(0);
  return tape.mul(x, tape.constant(std::move(mask)));
}

}  // namespace detail

/// Records the forward pass for a whole minibatch on one tape. Weight leaves
/// are created once and shared by every item, and training-mode batch norm
/// pools its statistics over all items, so the gradient of a batch loss is
/// the true minibatch gradient. Items may differ in frame count but share
/// the F x C feature layout. Inference mode freezes batch-norm statistics
/// and disables dropout.
template <typename Real>
BatchForwardNodes forward_collect_batch(Tape<Real>& tape, const std::vector<NodeId>& features,
                                        const NetworkSpec& spec, const WeightStore<Real>& store,
                                        const ForwardOptions& opt = {}) {
  spec.validate();
  if (features.empty()) throw std::invalid_argument("forward_collect: empty batch");
  for (NodeId f : features) {
    const Tensor<Real>& in = tape.value(f);
    if (in.rank() != 3 || in.shape[1] != spec.input_freq || in.shape[2] != spec.input_channels) {
      throw ShapeError("forward_collect: expected [T x " + std::to_string(spec.input_freq) + " x " +
                       std::to_string(spec.input_channels) + "] input, got " + shape_str(in.shape));
    }
  }
  if (!opt.upto.empty() && spec.find(opt.upto) == nullptr) {
    throw ParseError("forward_collect: unknown layer " + opt.upto);
  }
  BatchForwardNodes out;
  out.items.resize(features.size());
  std::vector<NodeId> x = features;
  const bool training = opt.mode == RunMode::Training;
  // Trainable arrays become variables in training mode so the same recorded
  // graph serves both loss evaluation and weight gradients.
  auto weight_leaf = [&](const std::string& layer, const char* array, const Tensor<Real>& v) {
    const NodeId id = training ? tape.variable(v) : tape.constant(v);
    out.weight_nodes[layer + "." + array] = id;
    return id;
  };
  std::vector<NodeId> z(x.size()), y(x.size());
  for (const auto& l : spec.layers) {
    const LayerWeights<Real>& w = store.at(l.name);
    const bool conv = l.kind == LayerKind::Conv;
    NodeId kernel = weight_leaf(l.name, "kernel", w.kernel);
    auto ones = tape.constant(Tensor<Real>(Shape{l.out_channels}, Real(1)));
    NodeId bias = weight_leaf(l.name, "bias", w.bias);
    for (size_t u = 0; u < x.size(); ++u) {
      if (conv) {
        z[u] = tape.conv2d(x[u], kernel);
      } else {
        const Tensor<Real>& xv = tape.value(x[u]);
        const long T = xv.shape[0];
        const long flat = xv.size() / T;
        if (w.kernel.shape[0] != flat) {
          throw ShapeError("forward_collect: layer " + l.name + " expects " +
                           std::to_string(w.kernel.shape[0]) + " inputs per frame, got " +
                           std::to_string(flat));
        }
        z[u] = tape.matmul(tape.reshape(x[u], Shape{T, flat}), kernel);
      }
      z[u] = tape.chan_affine(z[u], ones, bias);
    }
    if (l.kind == LayerKind::Output) {
      for (size_t u = 0; u < x.size(); ++u) {
        out.items[u].logits = z[u];  // raw logits, no normalization or nonlinearity
        out.items[u].activations[l.name] = z[u];
      }
      break;
    }
    if (training) {
      NodeId s = weight_leaf(l.name, "bn_scale", w.bn_scale);
      NodeId t = weight_leaf(l.name, "bn_shift", w.bn_shift);
      if (opt.frozen_stats) {
        detail::batchnorm_pooled_frozen(tape, z, l, w, s, t, out, y);
      } else {
        detail::batchnorm_pooled_training(tape, z, l, s, t, out, y);
      }
    } else {
      // Fold stored statistics into one affine: a = s/sqrt(v+eps), b = t - a*m.
      Tensor<Real> a(Shape{l.out_channels}), b(Shape{l.out_channels});
      for (long c = 0; c < l.out_channels; ++c) {
        const double inv = 1.0 / std::sqrt(static_cast<double>(w.bn_var[c]) + kBatchNormEpsilon);
        a[c] = static_cast<Real>(static_cast<double>(w.bn_scale[c]) * inv);
        b[c] = static_cast<Real>(static_cast<double>(w.bn_shift[c]) -
                                 static_cast<double>(a[c]) * static_cast<double>(w.bn_mean[c]));
      }
      auto an = tape.constant(std::move(a));
      auto bn = tape.constant(std::move(b));
      for (size_t u = 0; u < x.size(); ++u) y[u] = tape.chan_affine(z[u], an, bn);
    }
    for (size_t u = 0; u < x.size(); ++u) {
      y[u] = tape.relu(y[u]);
      if (conv && (l.pool_time > 1 || l.pool_freq > 1)) {
        y[u] = tape.maxpool2d(y[u], l.pool_time, l.pool_freq);
      }
      if (training) y[u] = detail::record_dropout(tape, y[u], l.dropout_keep, opt.dropout_rng);
      if (!conv) {
        y[u] = tape.reshape(y[u], Shape{tape.value(y[u]).shape[0], 1, l.out_channels});
      }
      out.items[u].activations[l.name] = y[u];
      x[u] = y[u];
    }
    if (l.name == opt.upto) break;
  }
  return out;
}

/// Records the forward pass from a single T x F x C feature node, collecting
/// each layer's post-ReLU activation. A batch of one: training-mode batch
/// norm sees only this utterance's statistics.
template <typename Real>
ForwardNodes forward_collect(Tape<Real>& tape, NodeId features, const NetworkSpec& spec,
                             const WeightStore<Real>& store, const ForwardOptions& opt = {}) {
  auto batch = forward_collect_batch(tape, std::vector<NodeId>{features}, spec, store, opt);
  ForwardNodes out;
  out.activations = std::move(batch.items.front().activations);
  out.logits = batch.items.front().logits;
  out.weight_nodes = std::move(batch.weight_nodes);
  out.batch_stats = std::move(batch.batch_stats);
  return out;
}

/// Value-level forward pass (inference), for callers that only need tensors.
template <typename Real>
std::map<std::string, Tensor<Real>> collect_activations(const Tensor<Real>& features,
                                                        const NetworkSpec& spec,
                                                        const WeightStore<Real>& store,
                                                        const std::string& upto = "") {
  Tape<Real> tape;
  auto in = tape.constant(features);
  ForwardOptions opt;
  opt.upto = upto;
  auto nodes = forward_collect(tape, in, spec, store, opt);
  std::map<std::string, Tensor<Real>> out;
  for (const auto& [name, id] : nodes.activations) out[name] = tape.value(id);
  return out;
}

/// The documented T'/F' schedule: time is halved once (C0), frequency halves
/// at each pooling conv layer.
inline std::pair<long, long> activation_extent(const NetworkSpec& spec, const std::string& layer,
                                               long input_frames) {
  long t = input_frames, f = spec.input_freq;
  for (const auto& l : spec.layers) {
    if (l.kind == LayerKind::Conv) {
      t /= l.pool_time;
      f /= l.pool_freq;
    } else {
      f = 1;
    }
    if (l.name == layer) return {t, f};
  }
  throw ParseError("activation_extent: unknown layer " + layer);
}

}  // namespace gramsynth
