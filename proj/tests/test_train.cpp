// Copyright (c) 2026 The gramsynth authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "gramsynth/speaker.hpp"
#include "gramsynth/train.hpp"

using namespace gramsynth;

namespace {

struct SmallSetup {
  ToyCorpus corpus = toy_corpus(2, 5, 123);
  NetworkSpec spec = NetworkSpec::toy(4);
  FrontendConfig fcfg = FrontendConfig::toy();

  std::vector<Tensor<double>> features;
  std::vector<LabelSeq> labels;

  SmallSetup() {
    const FrontendMatrices<double> mats(fcfg);
    for (const auto& u : corpus.utterances) {
      features.push_back(compute_features(u.wave, mats));
      labels.push_back(u.labels);
    }
  }
};

ToyTrainConfig short_config(long steps) {
  ToyTrainConfig cfg;
  cfg.max_steps = steps;
  cfg.batch_size = 4;
  cfg.eval_every = 40;
  cfg.target_error = 0.0;  // run the full budget
  return cfg;
}

}  // namespace

TEST_CASE("train config validation") {
  ToyTrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.max_steps = 0;
  CHECK_THROWS_AS(cfg.validate(), ParseError);
  cfg = {};
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ParseError);
  cfg = {};
  cfg.eval_every = 0;
  CHECK_THROWS_AS(cfg.validate(), ParseError);
  cfg = {};
  cfg.dropout_ramp_start = -1;
  CHECK_THROWS_AS(cfg.validate(), ParseError);
  cfg = {};
  cfg.dropout_ramp_steps = -1;
  CHECK_THROWS_AS(cfg.validate(), ParseError);
  cfg = {};
  cfg.target_error = -0.5;
  CHECK_THROWS_AS(cfg.validate(), ParseError);
}

TEST_CASE("greedy error rate on constructed logits") {
  // Two utterances with known decodes: build a store is overkill, so check
  // the underlying decoder plus the rate arithmetic through a real forward.
  SmallSetup s;
  const auto store = init_random<double>(s.spec, 5);
  const double rate = greedy_error_rate(s.features, s.labels, s.spec, store);
  CHECK(rate >= 0.0);
  // A random-init network is nowhere near the references.
  CHECK(rate > 0.3);

  std::vector<LabelSeq> short_labels(s.labels.begin(), s.labels.end() - 1);
  CHECK_THROWS_AS(greedy_error_rate(s.features, short_labels, s.spec, store), ShapeError);
}

TEST_CASE("toy training reduces the loss and reports the returned weights' error") {
  SmallSetup s;
  const auto res = train_toy_network(s.corpus, s.spec, s.fcfg, 3, short_config(120));

  REQUIRE(res.steps_run == 120);
  REQUIRE(res.trace.size() == 120);
  CHECK(res.trace.front().step == 1);
  CHECK(res.trace.back().step == 120);

  // Error column: -1 until the first evaluation, afterwards in [0, 1.5].
  for (long i = 0; i < 39; ++i) CHECK(res.trace[static_cast<size_t>(i)].error == -1.0);
  CHECK(res.trace[39].error >= 0.0);
  for (size_t i = 39; i < res.trace.size(); ++i) {
    CHECK(res.trace[i].error >= 0.0);
    CHECK(res.trace[i].error <= 1.5);
  }

  double head = 0.0, tail = 0.0;
  for (int i = 0; i < 5; ++i) {
    head += res.trace[static_cast<size_t>(i)].loss;
    tail += res.trace[res.trace.size() - 1 - static_cast<size_t>(i)].loss;
  }
  CHECK(tail < 0.5 * head);

  // The reported error is exactly the greedy error of the returned store.
  const double recheck = greedy_error_rate(s.features, s.labels, s.spec, res.store);
  CHECK(res.final_error == recheck);
}

TEST_CASE("training is deterministic per seed") {
  SmallSetup s;
  const auto a = train_toy_network(s.corpus, s.spec, s.fcfg, 11, short_config(60));
  const auto b = train_toy_network(s.corpus, s.spec, s.fcfg, 11, short_config(60));
  const auto c = train_toy_network(s.corpus, s.spec, s.fcfg, 12, short_config(60));

  REQUIRE(a.trace.size() == b.trace.size());
  bool identical = true, differs = false;
  for (size_t i = 0; i < a.trace.size(); ++i) {
    if (a.trace[i].loss != b.trace[i].loss || a.trace[i].error != b.trace[i].error) {
      identical = false;
    }
    if (i < c.trace.size() && a.trace[i].loss != c.trace[i].loss) differs = true;
  }
  CHECK(identical);
  CHECK(differs);

  for (const auto& [name, wa] : a.store.layers) {
    const auto& wb = b.store.layers.at(name);
    for (long i = 0; i < wa.kernel.size(); ++i) CHECK(wa.kernel[i] == wb.kernel[i]);
    for (long i = 0; i < wa.bn_mean.size(); ++i) CHECK(wa.bn_mean[i] == wb.bn_mean[i]);
  }
}

TEST_CASE("early stop honors the target error") {
  SmallSetup s;
  ToyTrainConfig cfg = short_config(2000);
  cfg.target_error = 2.0;  // any evaluation satisfies this
  const auto res = train_toy_network(s.corpus, s.spec, s.fcfg, 3, cfg);
  CHECK(res.steps_run == 40);  // stops at the first evaluation
  CHECK(res.final_error <= 2.0);
}

TEST_CASE("dropout ramp configurations run") {
  SmallSetup s;
  ToyTrainConfig cfg = short_config(8);
  cfg.eval_every = 8;
  cfg.dropout_ramp_start = 0;
  cfg.dropout_ramp_steps = 0;  // full dropout from the first step
  CHECK_NOTHROW(train_toy_network(s.corpus, s.spec, s.fcfg, 3, cfg));
  cfg.dropout = false;
  CHECK_NOTHROW(train_toy_network(s.corpus, s.spec, s.fcfg, 3, cfg));
}

TEST_CASE("batch-norm recalibration is a fixed point") {
  SmallSetup s;
  auto res = train_toy_network(s.corpus, s.spec, s.fcfg, 3, short_config(40));

  recalibrate_batchnorm(res.store, s.features, s.spec);
  auto once = res.store;
  recalibrate_batchnorm(res.store, s.features, s.spec);
  for (const auto& [name, w] : res.store.layers) {
    const auto& prev = once.layers.at(name);
    for (long i = 0; i < w.bn_mean.size(); ++i) {
      CHECK(w.bn_mean[i] == prev.bn_mean[i]);
      CHECK(w.bn_var[i] == prev.bn_var[i]);
    }
  }

  CHECK_THROWS_AS(recalibrate_batchnorm(res.store, {}, s.spec), std::invalid_argument);
}
