// Copyright (c) 2026 The gramsynth authors
// SPDX-License-Identifier: Apache-2.0
//
// The named gradient suite: one finite-difference check per differentiable
// tape operator, plus composite checks for the feature frontend, the loss
// builders, CTC, a training-mode network forward, and the full
// waveform-to-loss path. Shared by the gradcheck command and the acceptance
// harness so both run exactly the same cases.

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "gramsynth/ctc.hpp"
#include "gramsynth/frontend.hpp"
#include "gramsynth/gradcheck.hpp"
#include "gramsynth/losses.hpp"
#include "gramsynth/network.hpp"
#include "gramsynth/random.hpp"
#include "gramsynth/tape.hpp"
#include "gramsynth/tensor.hpp"

namespace gramsynth {

struct GradSuiteCase {
  std::string name;
  GradCheckReport report;
  double tol = 1e-4;
  bool passed = false;
};

namespace detail {

inline Tensor<double> suite_tensor(Rng& rng, Shape shape, double scale = 1.0, double shift = 0.0) {
  Tensor<double> t(std::move(shape));
  for (long i = 0; i < t.size(); ++i) t[i] = scale * rng.gaussian() + shift;
  return t;
}

/// Gaussian values pushed away from zero, for kinked ops (relu) and for
/// denominators.
inline Tensor<double> suite_tensor_offzero(Rng& rng, Shape shape, double min_abs) {
  Tensor<double> t = suite_tensor(rng, std::move(shape));
  for (long i = 0; i < t.size(); ++i) {
    if (t[i] >= 0.0 && t[i] < min_abs) t[i] += min_abs;
    if (t[i] < 0.0 && t[i] > -min_abs) t[i] -= min_abs;
  }
  return t;
}

/// The tiny network used by the suite: same layer kinds as the real specs
/// but small enough that checking every weight element stays fast.
inline NetworkSpec suite_network() {
  NetworkSpec s;
  s.input_freq = 6;
  s.input_channels = 3;
  s.vocab_size = 3;
  s.layers = {
      {"C0", LayerKind::Conv, 3, 3, 2, 1, 2, 1.0},
      {"C1", LayerKind::Conv, 3, 3, 2, 1, 1, 1.0},
      {"FC0", LayerKind::FullyConnected, 0, 0, 4, 1, 1, 1.0},
      {"CTC", LayerKind::Output, 0, 0, 3, 1, 1, 1.0},
  };
  s.validate();
  return s;
}

}  // namespace detail

/// Runs every suite case and reports per-case results. All checks use
/// double precision; tolerances are fixed at 1e-4 relative error.
inline std::vector<GradSuiteCase> run_gradient_suite(std::uint64_t seed = 0) {
  using T = Tape<double>;
  std::vector<GradSuiteCase> out;
  Rng master(seed);

  auto run = [&](const std::string& name,
                 const std::function<std::pair<NodeId, std::vector<NodeId>>(T&, Rng&)>& build,
                 double step = 1e-5, double tol = 1e-4) {
    T tape;
    Rng rng = master.fork(static_cast<std::uint64_t>(out.size()) + 1);
    auto [loss, vars] = build(tape, rng);
    GradSuiteCase c;
    c.name = name;
    c.tol = tol;
    c.report = finite_diff_check(tape, loss, vars, step);
    c.passed = c.report.passed(tol);
    out.push_back(std::move(c));
  };

  run("add_sub", [](T& t, Rng& r) {
    NodeId a = t.variable(detail::suite_tensor(r, {3, 4}));
    NodeId b = t.variable(detail::suite_tensor(r, {3, 4}));
    NodeId y = t.sum_all(t.square(t.sub(t.add(a, b), b)));
    return std::pair{y, std::vector{a, b}};
  });
  run("mul_div", [](T& t, Rng& r) {
    NodeId a = t.variable(detail::suite_tensor(r, {3, 4}));
    NodeId b = t.variable(detail::suite_tensor_offzero(r, {3, 4}, 0.5));
    NodeId y = t.sum_all(t.square(t.div(t.mul(a, b), b)));
    return std::pair{y, std::vector{a, b}};
  });
  run("scalar_ops", [](T& t, Rng& r) {
    NodeId a = t.variable(detail::suite_tensor(r, {2, 5}));
    NodeId y = t.sum_all(t.square(t.mul_scalar(t.add_scalar(a, 0.7), 1.3)));
    return std::pair{y, std::vector{a}};
  });
  run("exp_log_sqrt_square", [](T& t, Rng& r) {
    NodeId a = t.variable(detail::suite_tensor(r, {4, 3}, 0.5));
    NodeId y = t.sum_all(t.square(t.log(t.add_scalar(t.sqrt(t.exp(a)), 0.5))));
    return std::pair{y, std::vector{a}};
  });
  run("relu", [](T& t, Rng& r) {
    NodeId a = t.variable(detail::suite_tensor_offzero(r, {4, 5}, 0.05));
    NodeId y = t.sum_all(t.square(t.relu(a)));
    return std::pair{y, std::vector{a}};
  });
  run("matmul", [](T& t, Rng& r) {
    NodeId a = t.variable(detail::suite_tensor(r, {3, 4}));
    NodeId b = t.variable(detail::suite_tensor(r, {4, 2}));
    NodeId y = t.sum_all(t.square(t.matmul(a, b)));
    return std::pair{y, std::vector{a, b}};
  });
  run("conv2d", [](T& t, Rng& r) {
    NodeId x = t.variable(detail::suite_tensor(r, {5, 4, 2}));
    NodeId k = t.variable(detail::suite_tensor(r, {3, 3, 2, 2}, 0.5));
    NodeId y = t.sum_all(t.square(t.conv2d(x, k)));
    return std::pair{y, std::vector{x, k}};
  });
  run("maxpool2d", [](T& t, Rng& r) {
    // Index-dependent tiebreak keeps every max unique under perturbation.
    Tensor<double> v = detail::suite_tensor(r, {4, 6, 2});
    for (long i = 0; i < v.size(); ++i) v[i] += 1e-3 * static_cast<double>(i);
    NodeId x = t.variable(std::move(v));
    NodeId y = t.sum_all(t.square(t.maxpool2d(x, 2, 2)));
    return std::pair{y, std::vector{x}};
  });
  run("chan_affine", [](T& t, Rng& r) {
    NodeId x = t.variable(detail::suite_tensor(r, {4, 3, 2}));
    NodeId a = t.variable(detail::suite_tensor(r, {2}, 0.5, 1.0));
    NodeId b = t.variable(detail::suite_tensor(r, {2}));
    NodeId y = t.sum_all(t.square(t.chan_affine(x, a, b)));
    return std::pair{y, std::vector{x, a, b}};
  });
  run("reduce_sum_mean", [](T& t, Rng& r) {
    NodeId x = t.variable(detail::suite_tensor(r, {3, 4, 2}));
    NodeId y = t.add(t.sum_all(t.square(t.reduce_sum(x, {0}))),
                     t.sum_all(t.square(t.reduce_mean(x, {1}))));
    return std::pair{y, std::vector{x}};
  });
  run("sum_all", [](T& t, Rng& r) {
    NodeId x = t.variable(detail::suite_tensor(r, {2, 3}));
    NodeId y = t.square(t.sum_all(x));
    return std::pair{y, std::vector{x}};
  });
  run("concat", [](T& t, Rng& r) {
    NodeId a = t.variable(detail::suite_tensor(r, {2, 3, 2}));
    NodeId b = t.variable(detail::suite_tensor(r, {2, 3, 2}));
    NodeId y = t.add(t.sum_all(t.square(t.concat({a, b}, 0))),
                     t.sum_all(t.square(t.concat({a, b}, 2))));
    return std::pair{y, std::vector{a, b}};
  });
  run("frame_gather", [](T& t, Rng& r) {
    NodeId x = t.variable(detail::suite_tensor(r, {20}));
    NodeId y = t.sum_all(t.square(t.frame_gather(x, 8, 4)));
    return std::pair{y, std::vector{x}};
  });
  run("time_conv", [](T& t, Rng& r) {
    NodeId x = t.variable(detail::suite_tensor(r, {6, 3}));
    NodeId y = t.sum_all(t.square(t.time_conv(x, delta_kernel())));
    return std::pair{y, std::vector{x}};
  });
  run("reshape", [](T& t, Rng& r) {
    NodeId x = t.variable(detail::suite_tensor(r, {3, 4}));
    NodeId y = t.sum_all(t.square(t.reshape(x, {2, 6})));
    return std::pair{y, std::vector{x}};
  });
  run("pad_cols", [](T& t, Rng& r) {
    NodeId x = t.variable(detail::suite_tensor(r, {3, 4}));
    NodeId y = t.sum_all(t.square(t.add_scalar(t.pad_cols(x, 6), 0.3)));
    return std::pair{y, std::vector{x}};
  });

  // Composite paths.

  run("frontend_features", [](T& t, Rng& r) {
    FrontendConfig cfg = FrontendConfig::toy();
    FrontendMatrices<double> mats(cfg);
    NodeId w = t.variable(detail::suite_tensor(r, {cfg.window_len_samples + cfg.hop_samples}, 0.1));
    FeatureNodes f = features_from_waveform(t, w, mats);
    NodeId y = t.sum_all(t.square(f.features));
    return std::pair{y, std::vector{w}};
  }, 1e-6);
  run("gram_style_loss", [](T& t, Rng& r) {
    NodeId act = t.variable(detail::suite_tensor(r, {5, 3, 2}));
    GramTensor<double> target = gram_tensor(detail::suite_tensor(r, {4, 3, 2}));
    NodeId y = gram_sqdiff_node(t, act, std::move(target), 2.0);
    return std::pair{y, std::vector{act}};
  });
  run("content_energy_loss", [](T& t, Rng& r) {
    NodeId act = t.variable(detail::suite_tensor(r, {4, 3, 2}));
    NodeId log_mel = t.variable(detail::suite_tensor(r, {4, 5}));
    Tensor<double> ref = detail::suite_tensor(r, {4, 3, 2});
    Tensor<double> energy = frame_energy(detail::suite_tensor(r, {4, 5}));
    NodeId y = t.add(activation_sqdiff_node(t, act, ref, 0.7),
                     energy_penalty_node(t, log_mel, energy, 1.3));
    return std::pair{y, std::vector{act, log_mel}};
  });
  run("ctc_loss", [](T& t, Rng& r) {
    NodeId logits = t.variable(detail::suite_tensor(r, {5, 3}));
    NodeId y = ctc_loss_node(t, logits, LabelSeq{1, 2});
    return std::pair{y, std::vector{logits}};
  });
  run("network_training_weights", [](T& t, Rng& r) {
    const NetworkSpec spec = detail::suite_network();
    const WeightStore<double> store = init_random<double>(spec, r.next_u64());
    NodeId feat = t.constant(detail::suite_tensor(r, {5, spec.input_freq, spec.input_channels}));
    ForwardOptions opt;
    opt.mode = RunMode::Training;
    auto fwd = forward_collect_batch(t, {feat}, spec, store, opt);
    NodeId y = ctc_loss_node(t, fwd.items[0].logits, LabelSeq{1, 2});
    std::vector<NodeId> vars;
    for (const auto& [name, id] : fwd.weight_nodes) vars.push_back(id);
    return std::pair{y, vars};
  });
  run("waveform_to_loss", [](T& t, Rng& r) {
    FrontendConfig cfg = FrontendConfig::toy();
    FrontendMatrices<double> mats(cfg);
    NetworkSpec spec = detail::suite_network();
    spec.input_freq = cfg.num_channels;
    const WeightStore<double> store = init_random<double>(spec, r.next_u64());

    // Value-level references from a separate waveform.
    Tensor<double> ref_wave = detail::suite_tensor(r, {cfg.window_len_samples + 2 * cfg.hop_samples}, 0.1);
    Tensor<double> ref_feats;
    {
      Tape<double> ref_tape;
      ref_feats = ref_tape.value(
          features_from_waveform(ref_tape, ref_tape.constant(ref_wave), mats).features);
    }
    auto ref_acts = collect_activations(ref_feats, spec, store, "C1");
    LossSpec loss;
    loss.terms.push_back({"C0", LossRole::Style, 1.0});
    loss.terms.push_back({"C1", LossRole::Content, 1.0});
    loss.energy_weight = 0.5;
    LossTargets<double> targets;
    targets.style_grams.emplace("C0", gram_tensor(ref_acts.at("C0")));
    targets.content_refs.emplace("C1", ref_acts.at("C1"));
    {
      Tensor<double> lm(Shape{ref_feats.shape[0], ref_feats.shape[1]});
      for (long i = 0; i < lm.shape[0]; ++i) {
        for (long c = 0; c < lm.shape[1]; ++c) lm.at2(i, c) = ref_feats.at3(i, c, 0);
      }
      targets.energy_ref = frame_energy(lm);
    }

    NodeId w = t.variable(detail::suite_tensor(r, {cfg.window_len_samples + 2 * cfg.hop_samples}, 0.1));
    FeatureNodes f = features_from_waveform(t, w, mats);
    auto fwd = forward_collect(t, f.features, spec, store, ForwardOptions::inference_upto("C1"));
    LossNodes<double> nodes = total_loss_node(t, fwd.activations, f.log_mel, loss, targets);
    return std::pair{nodes.total, std::vector{w}};
  }, 1e-6);

  return out;
}

inline bool gradient_suite_passed(const std::vector<GradSuiteCase>& cases) {
  for (const auto& c : cases) {
    if (!c.passed) return false;
  }
  return !cases.empty();
}

}  // namespace gramsynth
