// Copyright (c) 2026 The gramsynth authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthesis engine: the two-stage generation strategy shared by feature
// inversion, texture generation, and voice conversion. Stage 1 fits a
// log-magnitude spectrogram to the loss with L-BFGS, Griffin-Lim turns it
// into audio, and stage 2 refines the waveform samples directly against the
// same loss. The stage-1 variable is the elementwise log of the smoothed
// modulus, so positivity needs no constraint handling.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "gramsynth/frontend.hpp"
#include "gramsynth/losses.hpp"
#include "gramsynth/network.hpp"
#include "gramsynth/optim.hpp"
#include "gramsynth/random.hpp"
#include "gramsynth/stft.hpp"
#include "gramsynth/tape.hpp"
#include "gramsynth/tensor.hpp"

namespace gramsynth {

enum class SynthesisTask { Invert, Texture, Convert };

/// What seeds the optimization. Noise starts stage 1 from energy-matched
/// white-noise log-magnitudes and stage 2 from the Griffin-Lim output;
/// Content starts stage 1 from the content spectrogram and stage 2 from the
/// content waveform itself.
enum class InitStrategy { Noise, Content };

struct SynthesisJob {
  SynthesisTask task = SynthesisTask::Invert;
  std::optional<Waveform> content;
  std::vector<Waveform> styles;
  LossSpec loss;
  double duration_s = 0.0;  // texture target length; content tasks keep the content duration
  long stage1_iters = 1000;
  long stage2_iters = 1000;
  int griffin_lim_iters = 100;
  std::uint64_t seed = 0;
  InitStrategy init = InitStrategy::Noise;

  void validate() const {
    loss.validate();
    if (task != SynthesisTask::Texture && !content) {
      throw std::invalid_argument("synthesis job: this task requires a content waveform");
    }
    if (task != SynthesisTask::Invert && styles.empty()) {
      throw std::invalid_argument("synthesis job: this task requires style waveforms");
    }
    for (const auto& term : loss.terms) {
      if (term.role == LossRole::Style && styles.empty()) {
        throw std::invalid_argument("synthesis job: style term on " + term.layer +
                                    " but no style waveforms");
      }
      if (term.role == LossRole::Content && !content) {
        throw std::invalid_argument("synthesis job: content term on " + term.layer +
                                    " but no content waveform");
      }
    }
    if (loss.energy_weight > 0 && !content) {
      throw std::invalid_argument("synthesis job: the energy penalty needs a content waveform");
    }
    if (!content && !(duration_s > 0)) {
      throw std::invalid_argument("synthesis job: texture jobs need a positive target duration");
    }
    if (stage1_iters < 0 || stage2_iters < 0) {
      throw std::invalid_argument("synthesis job: negative iteration budget");
    }
    if (griffin_lim_iters < 1) {
      throw std::invalid_argument("synthesis job: need at least one Griffin-Lim iteration");
    }
    if (init == InitStrategy::Content && !content) {
      throw std::invalid_argument("synthesis job: content initialization without a content waveform");
    }
  }
};

struct SynthesisResult {
  Waveform wave;                     // peak-normalized to 0.95
  double peak_gain = 1.0;            // factor applied to the optimizer output; divide to undo
  std::vector<double> stage1_trace;  // total loss at the init, then per accepted iterate
  std::vector<double> stage2_trace;
  double sc_report = 0.0;            // |STFT| of the stage-2 init vs the stage-1 magnitude
  Tensor<double> stage1_magnitude;   // T x kept_bins smoothed modulus, for debugging dumps
  double final_loss = 0.0;
  std::string stage1_stop;
  std::string stage2_stop;
};

namespace detail {

/// Deepest network layer named by any loss term; empty when there are none.
inline std::string deepest_loss_layer(const LossSpec& loss, const NetworkSpec& net) {
  std::string best;
  size_t best_idx = 0;
  for (const auto& term : loss.terms) {
    for (size_t i = 0; i < net.layers.size(); ++i) {
      if (net.layers[i].name == term.layer && (best.empty() || i > best_idx)) {
        best = term.layer;
        best_idx = i;
      }
    }
  }
  return best;
}

template <typename Real>
Tensor<Real> waveform_tensor(const Waveform& w) {
  Tensor<Real> t(Shape{w.length()});
  for (long i = 0; i < t.size(); ++i) t[i] = static_cast<Real>(w.samples[static_cast<size_t>(i)]);
  return t;
}

template <typename Real>
Tensor<Real> waveform_features(const Waveform& w, const FrontendMatrices<Real>& mats) {
  Tape<Real> tape;
  auto node = tape.constant(waveform_tensor<Real>(w));
  return tape.value(features_from_waveform(tape, node, mats).features);
}

/// Static log-mel channels, the first slice of the stacked feature tensor.
template <typename Real>
Tensor<Real> static_log_mel(const Tensor<Real>& feats) {
  Tensor<Real> lm(Shape{feats.shape[0], feats.shape[1]});
  for (long t = 0; t < lm.shape[0]; ++t) {
    for (long c = 0; c < lm.shape[1]; ++c) lm.at2(t, c) = feats.at3(t, c, 0);
  }
  return lm;
}

/// The same smoothed modulus the differentiable frontend computes,
/// sqrt(eps + re^2 + im^2) per bin.
inline Tensor<double> smooth_modulus(const Stft& stft, const std::vector<double>& samples) {
  Tensor<double> re, im;
  stft.analyze(samples, re, im);
  Tensor<double> m(re.shape);
  const double eps = stft.config().modulus_epsilon;
  for (long i = 0; i < m.size(); ++i) m[i] = std::sqrt(eps + re[i] * re[i] + im[i] * im[i]);
  return m;
}

/// Style Grams, content activation references, and the energy reference,
/// all evaluated once at plain value level.
template <typename Real>
LossTargets<Real> build_targets(const SynthesisJob& job, const NetworkSpec& net,
                                const WeightStore<Real>& store, const FrontendMatrices<Real>& mats) {
  LossTargets<Real> targets;
  const std::string deepest = deepest_loss_layer(job.loss, net);

  bool any_style = false, any_content = false;
  for (const auto& term : job.loss.terms) {
    (term.role == LossRole::Style ? any_style : any_content) = true;
  }

  if (any_style) {
    std::map<std::string, std::vector<Tensor<Real>>> per_layer;
    for (const auto& w : job.styles) {
      auto acts = collect_activations(waveform_features<Real>(w, mats), net, store, deepest);
      for (const auto& term : job.loss.terms) {
        if (term.role == LossRole::Style) per_layer[term.layer].push_back(acts.at(term.layer));
      }
    }
    for (auto& [layer, acts] : per_layer) {
      targets.style_grams.emplace(layer, pooled_style_gram(acts));
    }
  }

  if (any_content || job.loss.energy_weight > 0) {
    const Tensor<Real> feats = waveform_features<Real>(*job.content, mats);
    if (any_content) {
      auto acts = collect_activations(feats, net, store, deepest);
      for (const auto& term : job.loss.terms) {
        if (term.role == LossRole::Content) targets.content_refs.emplace(term.layer, acts.at(term.layer));
      }
    }
    if (job.loss.energy_weight > 0) {
      targets.energy_ref = frame_energy(static_log_mel(feats));
    }
  }
  return targets;
}

/// Records the loss graph downstream of the feature nodes and returns an
/// objective that replays it via set_value + recompute. The tape and loss
/// nodes are owned by the caller so the closure stays valid.
template <typename Real>
Objective make_objective(Tape<Real>& tape, NodeId var, const FeatureNodes& feat,
                         const SynthesisJob& job, const NetworkSpec& net,
                         const WeightStore<Real>& store, const LossTargets<Real>& targets,
                         LossNodes<Real>& loss_nodes) {
  std::map<std::string, NodeId> acts;
  if (!job.loss.terms.empty()) {
    const std::string deepest = deepest_loss_layer(job.loss, net);
    acts = forward_collect(tape, feat.features, net, store, ForwardOptions::inference_upto(deepest))
               .activations;
  }
  loss_nodes = total_loss_node(tape, acts, feat.log_mel, job.loss, targets);
  const Shape shape = tape.value(var).shape;
  return [&tape, var, shape, total = loss_nodes.total](const std::vector<double>& x,
                                                       std::vector<double>& grad) {
    Tensor<Real> xin(shape);
    for (long i = 0; i < xin.size(); ++i) xin[i] = static_cast<Real>(x[static_cast<size_t>(i)]);
    tape.set_value(var, std::move(xin));
    tape.recompute();
    auto grads = tape.backward(total);
    const Tensor<Real>& g = grads.at(var);
    for (long i = 0; i < g.size(); ++i) grad[static_cast<size_t>(i)] = static_cast<double>(g[i]);
    return static_cast<double>(tape.value(total)[0]);
  };
}

}  // namespace detail

/// Runs one synthesis job end to end: stage-1 spectrogram fit, Griffin-Lim
/// phase reconstruction, stage-2 waveform refinement, peak normalization.
template <typename Real>
SynthesisResult run_job(const SynthesisJob& job, const NetworkSpec& net, const WeightStore<Real>& store,
                        const FrontendConfig& cfg) {
  job.validate();
  net.validate();
  const FrontendMatrices<Real> mats(cfg);
  const Stft stft(cfg);

  long num_samples = job.content ? job.content->length()
                                 : std::lround(job.duration_s * static_cast<double>(cfg.sample_rate_hz));
  const long frames = frame_count(num_samples, cfg);
  if (frames < 1) {
    throw std::invalid_argument("synthesis job: target of " + std::to_string(num_samples) +
                                " samples is shorter than one analysis window");
  }
  // Texture output covers its frames exactly; content tasks keep the content
  // length, leaving at most hop-1 trailing samples outside every frame.
  if (!job.content) num_samples = (frames - 1) * cfg.hop_samples + cfg.window_len_samples;

  const LossTargets<Real> targets = detail::build_targets(job, net, store, mats);
  Rng master(job.seed);

  // Stage-1 initialization in log-magnitude space.
  const long bins = cfg.kept_bins;
  std::vector<double> l0(static_cast<size_t>(frames * bins));
  if (job.init == InitStrategy::Content) {
    const Tensor<double> ref = detail::smooth_modulus(stft, job.content->samples);
    for (long i = 0; i < ref.size(); ++i) l0[static_cast<size_t>(i)] = std::log(ref[i]);
  } else {
    // White noise, then a constant shift so total energy matches the
    // reference: content when present, otherwise the styles' mean frame
    // energy scaled to the target frame count.
    double target_energy = 0.0;
    if (job.content) {
      const Tensor<double> ref = detail::smooth_modulus(stft, job.content->samples);
      for (long i = 0; i < ref.size(); ++i) target_energy += ref[i] * ref[i];
    } else {
      double style_energy = 0.0;
      long style_frames = 0;
      for (const auto& w : job.styles) {
        const Tensor<double> ref = detail::smooth_modulus(stft, w.samples);
        for (long i = 0; i < ref.size(); ++i) style_energy += ref[i] * ref[i];
        style_frames += ref.shape[0];
      }
      target_energy = style_energy / static_cast<double>(style_frames) * static_cast<double>(frames);
    }
    Rng noise = master.fork(0);
    double raw_energy = 0.0;
    for (auto& l : l0) {
      l = 0.1 * noise.gaussian();
      raw_energy += std::exp(2.0 * l);
    }
    const double shift = 0.5 * std::log(target_energy / raw_energy);
    for (auto& l : l0) l += shift;
  }

  SynthesisResult result;

  // Stage 1: L-BFGS over log-magnitudes.
  {
    Tape<Real> tape;
    auto lvar = tape.variable(Tensor<Real>(Shape{frames, bins}, Real(0)));
    auto feat = features_from_magnitude(tape, tape.exp(lvar), mats);
    LossNodes<Real> loss_nodes;
    auto objective = detail::make_objective(tape, lvar, feat, job, net, store, targets, loss_nodes);
    LbfgsConfig lcfg;
    lcfg.max_iters = static_cast<int>(job.stage1_iters);
    auto r = lbfgs_minimize(objective, l0, lcfg);
    result.stage1_trace = std::move(r.trace);
    result.stage1_stop = std::move(r.stop_reason);
    result.stage1_magnitude = Tensor<double>(Shape{frames, bins});
    for (long i = 0; i < result.stage1_magnitude.size(); ++i) {
      result.stage1_magnitude[i] = std::exp(r.x[static_cast<size_t>(i)]);
    }
  }

  // The stage-1 variable models the smoothed modulus; undo the smoothing to
  // get the plain modulus Griffin-Lim expects. Bins at the smoothing floor
  // map back to zero.
  Tensor<double> gl_target(Shape{frames, bins});
  double gl_norm_sq = 0.0;
  for (long i = 0; i < gl_target.size(); ++i) {
    const double m = result.stage1_magnitude[i];
    gl_target[i] = std::sqrt(std::max(m * m - cfg.modulus_epsilon, 0.0));
    gl_norm_sq += gl_target[i] * gl_target[i];
  }

  // Stage-2 initialization: Griffin-Lim audio, or the content waveform.
  std::vector<double> w0(static_cast<size_t>(num_samples), 0.0);
  if (job.init == InitStrategy::Content) {
    w0 = job.content->samples;
    const Tensor<double> have = stft.magnitude(w0);
    result.sc_report = gl_norm_sq > 0.0 ? spectral_convergence(have, gl_target, std::sqrt(gl_norm_sq)) : 0.0;
  } else {
    auto gl = griffin_lim(gl_target, cfg, job.griffin_lim_iters, master.fork(1).next_u64());
    std::copy(gl.waveform.samples.begin(), gl.waveform.samples.end(), w0.begin());
    result.sc_report = gl.sc_trace.back();
  }

  // Stage 2: L-BFGS over waveform samples.
  {
    Tape<Real> tape;
    auto wvar = tape.variable(Tensor<Real>(Shape{num_samples}, Real(0)));
    auto feat = features_from_waveform(tape, wvar, mats);
    LossNodes<Real> loss_nodes;
    auto objective = detail::make_objective(tape, wvar, feat, job, net, store, targets, loss_nodes);
    LbfgsConfig lcfg;
    lcfg.max_iters = static_cast<int>(job.stage2_iters);
    auto r = lbfgs_minimize(objective, w0, lcfg);
    result.stage2_trace = std::move(r.trace);
    result.stage2_stop = std::move(r.stop_reason);
    result.final_loss = r.value;
    result.wave.sample_rate_hz = cfg.sample_rate_hz;
    result.wave.samples = std::move(r.x);
  }

  double peak = 0.0;
  for (double s : result.wave.samples) peak = std::max(peak, std::abs(s));
  if (peak > 0.0) {
    result.peak_gain = 0.95 / peak;
    for (double& s : result.wave.samples) s *= result.peak_gain;
  }
  return result;
}

/// Content-only inversion job for one layer. The energy penalty keeps frame
/// energies honest where the layer itself carries little level information;
/// it defaults on and should stay on for fully-connected layers.
inline SynthesisJob invert_job(const Waveform& content, const std::string& layer,
                               const NetworkSpec& net, bool energy_penalty = true) {
  const LayerSpec* l = net.find(layer);
  if (!l) throw ParseError("invert: unknown layer " + layer);
  SynthesisJob job;
  job.task = SynthesisTask::Invert;
  job.content = content;
  job.loss.terms.push_back({layer, LossRole::Content, l->kind == LayerKind::Conv ? 0.2 : 10.0});
  job.loss.energy_weight = energy_penalty ? 1.0 : 0.0;
  return job;
}

/// Style-only texture job. An empty layer list takes the default style
/// layer range; explicit layers all get the default style weight.
inline SynthesisJob texture_job(std::vector<Waveform> styles, const std::vector<std::string>& layers,
                                double duration_s, std::uint64_t seed, const NetworkSpec& net) {
  SynthesisJob job;
  job.task = SynthesisTask::Texture;
  job.styles = std::move(styles);
  job.duration_s = duration_s;
  job.seed = seed;
  if (layers.empty()) {
    job.loss = LossSpec::texture_defaults(net);
  } else {
    for (const auto& name : layers) {
      if (!net.find(name)) throw ParseError("texture: unknown layer " + name);
      job.loss.terms.push_back({name, LossRole::Style, 1e5});
    }
    job.loss.energy_weight = 0.0;
  }
  return job;
}

/// Voice conversion with the default layer split: shallow layers match the
/// style speaker's Grams, deep layers match the content utterance.
inline SynthesisJob convert_job(const Waveform& content, std::vector<Waveform> styles,
                                const NetworkSpec& net) {
  SynthesisJob job;
  job.task = SynthesisTask::Convert;
  job.content = content;
  job.styles = std::move(styles);
  job.loss = LossSpec::voice_conversion_defaults(net);
  return job;
}

inline SynthesisJob convert_job(const Waveform& content, std::vector<Waveform> styles,
                                const NetworkSpec& net, LossSpec loss) {
  SynthesisJob job = convert_job(content, std::move(styles), net);
  job.loss = std::move(loss);
  return job;
}

template <typename Real>
SynthesisResult invert_from_layer(const Waveform& content, const std::string& layer, bool energy_penalty,
                                  const NetworkSpec& net, const WeightStore<Real>& store,
                                  const FrontendConfig& cfg, std::uint64_t seed = 0) {
  SynthesisJob job = invert_job(content, layer, net, energy_penalty);
  job.seed = seed;
  return run_job(job, net, store, cfg);
}

template <typename Real>
SynthesisResult synthesize_texture(const std::vector<Waveform>& styles,
                                   const std::vector<std::string>& layers, double duration_s,
                                   std::uint64_t seed, const NetworkSpec& net,
                                   const WeightStore<Real>& store, const FrontendConfig& cfg) {
  return run_job(texture_job(styles, layers, duration_s, seed, net), net, store, cfg);
}

template <typename Real>
SynthesisResult convert_voice(const Waveform& content, const std::vector<Waveform>& styles,
                              const NetworkSpec& net, const WeightStore<Real>& store,
                              const FrontendConfig& cfg, std::uint64_t seed = 0) {
  SynthesisJob job = convert_job(content, styles, net);
  job.seed = seed;
  return run_job(job, net, store, cfg);
}

}  // namespace gramsynth
