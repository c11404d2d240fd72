// Copyright (c) 2026 The gramsynth authors
// SPDX-License-Identifier: Apache-2.0
//
// Engine-level tests run at deliberately small scale: short waveforms and
// budgets of a few dozen iterations, enough to exercise every code path and
// the monotonicity/determinism contracts without long optimization runs.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <vector>

#include "gramsynth/frontend.hpp"
#include "gramsynth/losses.hpp"
#include "gramsynth/network.hpp"
#include "gramsynth/random.hpp"
#include "gramsynth/synthesis.hpp"
#include "gramsynth/tensor.hpp"

using namespace gramsynth;

namespace {

Waveform tone(double secs, double f0, double amp, std::uint64_t seed) {
  Waveform w;
  w.sample_rate_hz = 16000;
  const long n = std::lround(secs * 16000.0);
  w.samples.resize(static_cast<size_t>(n));
  Rng rng(seed);
  for (long i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / 16000.0;
    double v = 0.0;
    for (int h = 1; h <= 6; ++h) {
      v += std::sin(2.0 * std::numbers::pi * f0 * h * t + static_cast<double>(h)) /
           static_cast<double>(h);
    }
    w.samples[static_cast<size_t>(i)] = amp * (0.25 * v + 0.02 * rng.gaussian());
  }
  return w;
}

struct Fixture {
  NetworkSpec net = NetworkSpec::toy(4);
  WeightStore<double> store = init_random<double>(net, 31);
  FrontendConfig cfg = FrontendConfig::toy();
};

double relative_error(const Tensor<double>& a, const Tensor<double>& b) {
  double num = 0.0, den = 0.0;
  for (long i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num / den);
}

bool non_increasing(const std::vector<double>& trace) {
  for (size_t i = 1; i < trace.size(); ++i) {
    if (trace[i] > trace[i - 1]) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("synthesis job validation") {
  Fixture fx;
  SynthesisJob job;
  job.task = SynthesisTask::Invert;
  job.loss.terms.push_back({"C0", LossRole::Content, 1.0});
  CHECK_THROWS_AS(job.validate(), std::invalid_argument);  // no content

  job.task = SynthesisTask::Texture;
  job.loss.terms = {{"C0", LossRole::Style, 1.0}};
  job.duration_s = 1.0;
  CHECK_THROWS_AS(job.validate(), std::invalid_argument);  // no styles
  job.styles.push_back(tone(0.1, 200.0, 0.1, 1));
  CHECK_NOTHROW(job.validate());

  job.duration_s = 0.0;
  CHECK_THROWS_AS(job.validate(), std::invalid_argument);  // texture needs a duration
  job.duration_s = 1.0;

  job.loss.energy_weight = 1.0;
  CHECK_THROWS_AS(job.validate(), std::invalid_argument);  // energy ref needs content
  job.loss.energy_weight = 0.0;

  job.init = InitStrategy::Content;
  CHECK_THROWS_AS(job.validate(), std::invalid_argument);  // content init without content
  job.init = InitStrategy::Noise;

  job.stage1_iters = -1;
  CHECK_THROWS_AS(job.validate(), std::invalid_argument);
  job.stage1_iters = 0;
  job.griffin_lim_iters = 0;
  CHECK_THROWS_AS(job.validate(), std::invalid_argument);
  job.griffin_lim_iters = 1;
  CHECK_NOTHROW(job.validate());

  // A duration shorter than one analysis window is infeasible.
  job.duration_s = 0.01;
  CHECK_THROWS_AS(run_job(job, fx.net, fx.store, fx.cfg), std::invalid_argument);
}

TEST_CASE("job builders fill in the documented weights") {
  const auto net = NetworkSpec::toy(4);
  const auto content = tone(0.2, 150.0, 0.1, 2);

  auto inv = invert_job(content, "C2", net, false);
  REQUIRE(inv.loss.terms.size() == 1);
  CHECK(inv.loss.terms[0].layer == "C2");
  CHECK(inv.loss.terms[0].role == LossRole::Content);
  CHECK(inv.loss.terms[0].weight == 0.2);
  CHECK(inv.loss.energy_weight == 0.0);

  auto inv_fc = invert_job(content, "FC0", net);
  CHECK(inv_fc.loss.terms[0].weight == 10.0);
  CHECK(inv_fc.loss.energy_weight == 1.0);
  CHECK_THROWS_AS(invert_job(content, "C9", net), ParseError);

  auto tex = texture_job({content}, {"C0", "C2"}, 1.0, 7, net);
  REQUIRE(tex.loss.terms.size() == 2);
  for (const auto& t : tex.loss.terms) {
    CHECK(t.role == LossRole::Style);
    CHECK(t.weight == 1e5);
  }
  CHECK(tex.loss.energy_weight == 0.0);
  CHECK_THROWS_AS(texture_job({content}, {"nope"}, 1.0, 7, net), ParseError);

  auto tex_default = texture_job({content}, {}, 1.0, 7, net);
  const auto want = LossSpec::texture_defaults(net);
  REQUIRE(tex_default.loss.terms.size() == want.terms.size());
  for (size_t i = 0; i < want.terms.size(); ++i) {
    CHECK(tex_default.loss.terms[i].layer == want.terms[i].layer);
    CHECK(tex_default.loss.terms[i].weight == want.terms[i].weight);
  }

  auto conv = convert_job(content, {content}, net);
  const auto vc = LossSpec::voice_conversion_defaults(net);
  CHECK(conv.loss.terms.size() == vc.terms.size());
  CHECK(conv.loss.energy_weight == vc.energy_weight);
  LossSpec custom;
  custom.terms = {{"C0", LossRole::Style, 3.0}, {"FC0", LossRole::Content, 1.0}};
  auto conv2 = convert_job(content, {content}, net, custom);
  CHECK(conv2.loss.terms.size() == 2);
}

TEST_CASE("self-inversion is a fixed point") {
  Fixture fx;
  const auto content = tone(0.3, 140.0, 0.08, 3);
  SynthesisJob job = invert_job(content, "C0", fx.net, true);
  job.init = InitStrategy::Content;
  job.stage1_iters = 0;
  job.stage2_iters = 10;
  job.griffin_lim_iters = 1;

  const auto res = run_job(job, fx.net, fx.store, fx.cfg);
  CHECK(res.final_loss < 1e-8);
  CHECK(res.stage2_stop == "gradient");
  REQUIRE(res.wave.length() == content.length());

  double drift = 0.0, peak = 0.0;
  for (long i = 0; i < content.length(); ++i) {
    const double raw = res.wave.samples[static_cast<size_t>(i)] / res.peak_gain;
    drift = std::max(drift, std::abs(raw - content.samples[static_cast<size_t>(i)]));
    peak = std::max(peak, std::abs(res.wave.samples[static_cast<size_t>(i)]));
  }
  CHECK(drift <= 1e-6);
  CHECK(peak == Catch::Approx(0.95).margin(1e-12));
}

TEST_CASE("noise-init inversion reduces the loss and keeps the duration") {
  Fixture fx;
  const auto content = tone(0.3, 160.0, 0.1, 4);
  SynthesisJob job = invert_job(content, "C0", fx.net, false);
  job.stage1_iters = 30;
  job.stage2_iters = 5;
  job.griffin_lim_iters = 25;
  job.seed = 9;

  const auto res = run_job(job, fx.net, fx.store, fx.cfg);
  REQUIRE(res.wave.length() == content.length());
  REQUIRE(!res.stage1_trace.empty());
  REQUIRE(!res.stage2_trace.empty());
  CHECK(non_increasing(res.stage1_trace));
  CHECK(non_increasing(res.stage2_trace));
  INFO("stage1 " << res.stage1_trace.front() << " -> " << res.stage1_trace.back()
                 << ", stage2 -> " << res.stage2_trace.back());
  CHECK(res.stage2_trace.back() < 0.05 * res.stage1_trace.front());
  CHECK(res.sc_report > 0.0);
  CHECK(res.stage1_magnitude.shape == Shape{frame_count(content.length(), fx.cfg), 257});
}

TEST_CASE("texture with zero budgets returns the initialization, deterministically") {
  Fixture fx;
  const auto style = tone(0.3, 180.0, 0.1, 5);
  SynthesisJob job = texture_job({style}, {"C0"}, 0.5, 17, fx.net);
  job.stage1_iters = 0;
  job.stage2_iters = 0;
  job.griffin_lim_iters = 8;

  const auto a = run_job(job, fx.net, fx.store, fx.cfg);
  const auto b = run_job(job, fx.net, fx.store, fx.cfg);
  CHECK(a.wave.samples == b.wave.samples);
  CHECK(a.stage1_trace == b.stage1_trace);
  CHECK(a.stage1_trace.size() == 1);
  CHECK(a.stage2_trace.size() == 1);

  job.seed = 18;
  const auto c = run_job(job, fx.net, fx.store, fx.cfg);
  CHECK(a.wave.samples != c.wave.samples);

  // Requested 0.5 s; the output covers its frames exactly, within one hop.
  CHECK(std::abs(a.wave.length() - 8000) <= fx.cfg.hop_samples);
}

TEST_CASE("texture optimization reduces style loss") {
  Fixture fx;
  const auto s1 = tone(0.3, 170.0, 0.1, 6);
  const auto s2 = tone(0.35, 175.0, 0.09, 7);
  SynthesisJob job = texture_job({s1, s2}, {"C0"}, 0.4, 23, fx.net);
  job.stage1_iters = 40;
  job.stage2_iters = 8;
  job.griffin_lim_iters = 20;

  const auto res = run_job(job, fx.net, fx.store, fx.cfg);
  CHECK(non_increasing(res.stage1_trace));
  CHECK(non_increasing(res.stage2_trace));
  INFO("style loss " << res.stage1_trace.front() << " -> " << res.final_loss);
  CHECK(res.final_loss < 0.5 * res.stage1_trace.front());
}

TEST_CASE("conversion keeps the content duration and lowers the loss") {
  Fixture fx;
  const auto content = tone(0.25, 130.0, 0.1, 8);
  const auto style = tone(0.3, 210.0, 0.1, 9);
  SynthesisJob job = convert_job(content, {style}, fx.net);
  job.stage1_iters = 12;
  job.stage2_iters = 6;
  job.griffin_lim_iters = 15;
  job.seed = 4;

  const auto res = run_job(job, fx.net, fx.store, fx.cfg);
  REQUIRE(res.wave.length() == content.length());
  CHECK(non_increasing(res.stage1_trace));
  CHECK(non_increasing(res.stage2_trace));
  CHECK(res.final_loss < res.stage1_trace.front());
}

TEST_CASE("energy penalty improves silent-frame reconstruction from a deep layer") {
  Fixture fx;
  // First half tone, second half digital silence.
  Waveform content = tone(0.3, 150.0, 0.1, 10);
  for (size_t i = content.samples.size() / 2; i < content.samples.size(); ++i) content.samples[i] = 0.0;

  const FrontendMatrices<double> mats(fx.cfg);
  const auto ref_feats = compute_features(content, mats);
  const long T = ref_feats.shape[0];

  auto run_with = [&](bool penalty) {
    SynthesisJob job = invert_job(content, "FC0", fx.net, penalty);
    job.stage1_iters = 40;
    job.stage2_iters = 0;
    job.griffin_lim_iters = 15;
    job.seed = 11;
    const auto res = run_job(job, fx.net, fx.store, fx.cfg);
    Waveform raw;
    raw.sample_rate_hz = res.wave.sample_rate_hz;
    for (double s : res.wave.samples) raw.samples.push_back(s / res.peak_gain);
    const auto feats = compute_features(raw, mats);
    // Mean absolute frame-energy error over the fully silent frames.
    double err = 0.0;
    long count = 0;
    for (long t = 0; t < T; ++t) {
      if (t * fx.cfg.hop_samples < content.length() / 2) continue;
      double eg = 0.0, er = 0.0;
      for (long c = 0; c < ref_feats.shape[1]; ++c) {
        eg += feats.at3(t, c, 0);
        er += ref_feats.at3(t, c, 0);
      }
      err += std::abs(eg - er);
      count++;
    }
    return err / static_cast<double>(count);
  };

  const double err_off = run_with(false);
  const double err_on = run_with(true);
  INFO("silent-frame energy error: off " << err_off << ", on " << err_on);
  CHECK(err_on < err_off);
}

TEST_CASE("degenerate conversion reproduces the content features") {
  Fixture fx;
  const auto content = tone(0.25, 145.0, 0.1, 12);
  SynthesisJob job = convert_job(content, {content}, fx.net);
  job.init = InitStrategy::Content;
  job.stage1_iters = 0;
  job.stage2_iters = 5;
  job.griffin_lim_iters = 1;

  const auto res = run_job(job, fx.net, fx.store, fx.cfg);
  const FrontendMatrices<double> mats(fx.cfg);
  Waveform raw;
  raw.sample_rate_hz = 16000;
  for (double s : res.wave.samples) raw.samples.push_back(s / res.peak_gain);
  const auto got = compute_features(raw, mats);
  const auto want = compute_features(content, mats);
  CHECK(relative_error(got, want) < 0.05);
}
