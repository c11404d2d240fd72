// Copyright (c) 2026 The gramsynth authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>
#include <iterator>
#include <string>

#include "gramsynth/gradcheck.hpp"
#include "gramsynth/network.hpp"
#include "gramsynth/random.hpp"
#include "gramsynth/tape.hpp"
#include "gramsynth/tensor.hpp"
#include "gramsynth/weights_io.hpp"

using namespace gramsynth;

namespace {

template <typename Real>
Tensor<Real> random_features(long t, long f, long c, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<Real> x(Shape{t, f, c});
  for (long i = 0; i < x.size(); ++i) x[i] = static_cast<Real>(rng.gaussian());
  return x;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("activation extents follow the pooling schedule") {
  const auto paper = NetworkSpec::paper(30);
  CHECK(activation_extent(paper, "C0", 98) == std::pair<long, long>(49, 40));
  CHECK(activation_extent(paper, "C1", 98) == std::pair<long, long>(49, 20));
  CHECK(activation_extent(paper, "C2", 98) == std::pair<long, long>(49, 20));
  CHECK(activation_extent(paper, "C3", 98) == std::pair<long, long>(49, 10));
  CHECK(activation_extent(paper, "C9", 98) == std::pair<long, long>(49, 10));
  CHECK(activation_extent(paper, "FC0", 98) == std::pair<long, long>(49, 1));
  CHECK(activation_extent(paper, "CTC", 98) == std::pair<long, long>(49, 1));

  const auto toy = NetworkSpec::toy(4);
  CHECK(activation_extent(toy, "C0", 20) == std::pair<long, long>(10, 10));
  CHECK(activation_extent(toy, "C1", 20) == std::pair<long, long>(10, 5));
  CHECK(activation_extent(toy, "C3", 20) == std::pair<long, long>(10, 2));
  CHECK(activation_extent(toy, "C5", 20) == std::pair<long, long>(10, 2));
  CHECK(activation_extent(toy, "FC0", 20) == std::pair<long, long>(10, 1));
  CHECK_THROWS_AS(activation_extent(toy, "C7", 20), ParseError);
}

TEST_CASE("toy forward pass produces the documented shapes") {
  const auto spec = NetworkSpec::toy(4);
  const auto store = init_random<double>(spec, 1);
  const auto feats = random_features<double>(20, 20, 3, 11);
  const auto acts = collect_activations(feats, spec, store);

  REQUIRE(acts.count("C0") == 1);
  CHECK(acts.at("C0").shape == Shape{10, 10, 8});
  CHECK(acts.at("C1").shape == Shape{10, 5, 8});
  CHECK(acts.at("C2").shape == Shape{10, 5, 8});
  CHECK(acts.at("C3").shape == Shape{10, 2, 16});
  CHECK(acts.at("C4").shape == Shape{10, 2, 16});
  CHECK(acts.at("C5").shape == Shape{10, 2, 16});
  CHECK(acts.at("FC0").shape == Shape{10, 1, 32});
  CHECK(acts.at("CTC").shape == Shape{10, 4});
  for (const auto& [name, a] : acts) {
    INFO("layer " << name);
    CHECK(a.all_finite());
  }

  // Post-ReLU activations are nonnegative everywhere except the raw logits.
  for (const char* name : {"C0", "C3", "FC0"}) {
    const auto& a = acts.at(name);
    for (long i = 0; i < a.size(); ++i) REQUIRE(a[i] >= 0.0);
  }

  // Odd frame counts truncate through the pools exactly like the schedule.
  const auto odd = collect_activations(random_features<double>(21, 20, 3, 12), spec, store);
  for (const auto& l : spec.layers) {
    if (l.kind == LayerKind::Output) continue;
    const auto [t, f] = activation_extent(spec, l.name, 21);
    CHECK(odd.at(l.name).shape == Shape{t, f, l.out_channels});
  }
}

TEST_CASE("paper-scale head of the network runs in single precision") {
  const auto spec = NetworkSpec::paper(30);
  const auto store = init_random<float>(spec, 2);
  const auto feats = random_features<float>(20, 80, 3, 13);
  const auto acts = collect_activations(feats, spec, store, "C1");
  CHECK(acts.at("C0").shape == Shape{10, 40, 128});
  CHECK(acts.at("C1").shape == Shape{10, 20, 128});
  CHECK(acts.count("C2") == 0);  // stopped after C1
  CHECK(acts.at("C1").all_finite());
}

TEST_CASE("zero kernels give zero activations and logits") {
  const auto spec = NetworkSpec::toy(4);
  auto store = init_random<double>(spec, 3);
  for (auto& [name, w] : store.layers) {
    std::fill(w.kernel.data.begin(), w.kernel.data.end(), 0.0);
  }
  const auto acts = collect_activations(random_features<double>(12, 20, 3, 5), spec, store);
  for (const auto& [name, a] : acts) {
    INFO("layer " << name);
    for (long i = 0; i < a.size(); ++i) REQUIRE(a[i] == 0.0);
  }
}

TEST_CASE("initialization is seed-deterministic with fan-in scaling") {
  const auto spec = NetworkSpec::toy(4);
  const auto a = init_random<double>(spec, 7);
  const auto b = init_random<double>(spec, 7);
  const auto c = init_random<double>(spec, 8);
  CHECK(a.at("C0").kernel.data == b.at("C0").kernel.data);
  CHECK(a.at("FC0").kernel.data == b.at("FC0").kernel.data);
  CHECK(a.at("C0").kernel.data != c.at("C0").kernel.data);

  CHECK(a.at("C0").kernel.shape == Shape{5, 5, 3, 8});
  CHECK(a.at("C1").kernel.shape == Shape{5, 5, 8, 8});
  CHECK(a.at("FC0").kernel.shape == Shape{32, 32});  // flattened 2 freq x 16 chans
  CHECK(a.at("CTC").kernel.shape == Shape{32, 4});

  // Sample variance of the C0 kernel should sit near 2 / fan_in.
  const auto& k = a.at("C0").kernel;
  double sum = 0.0, sq = 0.0;
  for (long i = 0; i < k.size(); ++i) {
    sum += k[i];
    sq += k[i] * k[i];
  }
  const double mean = sum / static_cast<double>(k.size());
  const double var = sq / static_cast<double>(k.size()) - mean * mean;
  const double expected = 2.0 / 75.0;  // fan_in = 5*5*3
  CHECK(var == Catch::Approx(expected).epsilon(0.2));

  // Biases start at zero, batch norm at identity.
  for (long i = 0; i < a.at("C0").bias.size(); ++i) REQUIRE(a.at("C0").bias[i] == 0.0);
  for (long i = 0; i < a.at("C0").bn_scale.size(); ++i) {
    REQUIRE(a.at("C0").bn_scale[i] == 1.0);
    REQUIRE(a.at("C0").bn_var[i] == 1.0);
  }
  CHECK(a.at("CTC").bn_scale.data.empty());  // no batch norm on the head
}

TEST_CASE("inference replays bit-identically") {
  const auto spec = NetworkSpec::toy(4);
  const auto store = init_random<double>(spec, 9);
  const auto feats = random_features<double>(16, 20, 3, 21);
  const auto first = collect_activations(feats, spec, store);
  const auto second = collect_activations(feats, spec, store);
  for (const auto& [name, a] : first) {
    INFO("layer " << name);
    REQUIRE(a.data == second.at(name).data);
  }
}

TEST_CASE("training mode normalizes with batch statistics and masks with dropout") {
  const auto spec = NetworkSpec::toy(4);
  const auto store = init_random<double>(spec, 10);
  const auto feats = random_features<double>(16, 20, 3, 22);

  auto run = [&](std::uint64_t rng_seed) {
    Tape<double> tape;
    Rng rng(rng_seed);
    ForwardOptions opt;
    opt.mode = RunMode::Training;
    opt.dropout_rng = &rng;
    auto in = tape.constant(feats);
    auto nodes = forward_collect(tape, in, spec, store, opt);
    return std::pair(tape.value(nodes.logits), nodes);
  };

  Tape<double> tape;
  Rng rng(1);
  ForwardOptions opt;
  opt.mode = RunMode::Training;
  opt.dropout_rng = &rng;
  auto in = tape.constant(feats);
  auto nodes = forward_collect(tape, in, spec, store, opt);

  // Batch statistics were recorded for every normalized layer.
  REQUIRE(nodes.batch_stats.count("C0") == 1);
  REQUIRE(nodes.batch_stats.count("FC0") == 1);
  CHECK(nodes.batch_stats.count("CTC") == 0);
  const auto& c0_var = tape.value(nodes.batch_stats.at("C0").second);
  REQUIRE(c0_var.shape == Shape{8});
  for (long i = 0; i < c0_var.size(); ++i) REQUIRE(c0_var[i] > 0.0);

  // Weights are variables in training mode and receive gradients.
  REQUIRE(nodes.weight_nodes.count("C0.bn_scale") == 1);
  auto loss = tape.sum_all(nodes.logits);
  auto grads = tape.backward(loss);
  const auto& g_scale = grads.at(nodes.weight_nodes.at("C0.bn_scale"));
  double norm = 0.0;
  for (long i = 0; i < g_scale.size(); ++i) norm += g_scale[i] * g_scale[i];
  CHECK(norm > 0.0);

  // Same dropout seed, same logits; different seed, different logits.
  const auto l1 = run(5).first;
  const auto l2 = run(5).first;
  const auto l3 = run(6).first;
  CHECK(l1.data == l2.data);
  CHECK(l1.data != l3.data);

  // Training without an rng is rejected because dropout needs masks.
  Tape<double> bare;
  ForwardOptions no_rng;
  no_rng.mode = RunMode::Training;
  CHECK_THROWS_AS(forward_collect(bare, bare.constant(feats), spec, store, no_rng),
                  std::invalid_argument);
}

TEST_CASE("training-mode weight gradients pass finite differences") {
  // A deliberately tiny network keeps the finite-difference sweep fast.
  NetworkSpec spec;
  spec.input_freq = 6;
  spec.input_channels = 2;
  spec.vocab_size = 3;
  spec.layers = {
      {"C0", LayerKind::Conv, 3, 3, 2, 2, 2, 1.0},
      {"FC0", LayerKind::FullyConnected, 0, 0, 4, 1, 1, 1.0},
      {"CTC", LayerKind::Output, 0, 0, 3, 1, 1, 1.0},
  };
  spec.validate();
  const auto store = init_random<double>(spec, 17);
  const auto feats = random_features<double>(6, 6, 2, 23);

  Tape<double> tape;
  ForwardOptions opt;
  opt.mode = RunMode::Training;
  auto in = tape.constant(feats);
  auto nodes = forward_collect(tape, in, spec, store, opt);
  // A curved loss so second-order effects exercise every path.
  auto loss = tape.sum_all(tape.square(nodes.logits));
  std::vector<NodeId> vars;
  for (const auto& [name, id] : nodes.weight_nodes) vars.push_back(id);
  const auto report = finite_diff_check(tape, loss, vars);
  INFO("max rel err " << report.max_rel_err << " at var " << report.worst_var);
  CHECK(report.passed(1e-4));
}

TEST_CASE("inference gradients reach the input features") {
  const auto spec = NetworkSpec::toy(4);
  const auto store = init_random<double>(spec, 19);
  Tape<double> tape;
  auto in = tape.variable(random_features<double>(8, 20, 3, 29));
  auto nodes = forward_collect(tape, in, spec, store, ForwardOptions::inference_upto("C1"));
  auto loss = tape.sum_all(tape.square(nodes.activations.at("C1")));
  const auto report = finite_diff_check(tape, loss, {in});
  INFO("max rel err " << report.max_rel_err);
  CHECK(report.passed(1e-4));
}

TEST_CASE("forward pass validates its inputs") {
  const auto spec = NetworkSpec::toy(4);
  const auto store = init_random<double>(spec, 31);
  Tape<double> tape;

  // Wrong frequency extent.
  auto bad = tape.constant(random_features<double>(10, 21, 3, 1));
  CHECK_THROWS_AS(forward_collect(tape, bad, spec, store), ShapeError);

  // Unknown stop layer.
  auto ok = tape.constant(random_features<double>(10, 20, 3, 2));
  ForwardOptions opt;
  opt.upto = "C9";
  CHECK_THROWS_AS(forward_collect(tape, ok, spec, store, opt), ParseError);

  // Missing weights for a layer.
  WeightStore<double> partial = store;
  partial.layers.erase("C3");
  CHECK_THROWS_AS(forward_collect(tape, ok, spec, partial), ParseError);
}

TEST_CASE("weight files round-trip byte-identically") {
  const auto spec = NetworkSpec::toy(4);
  ModelFile model;
  model.spec = spec;
  model.store = init_random<float>(spec, 41);
  model.charset = {"_", "a", "e", "o"};

  const std::string p1 = "test_weights_a.mgw";
  const std::string p2 = "test_weights_b.mgw";
  save_model(p1, model);
  const ModelFile loaded = load_model(p1);

  CHECK(loaded.charset == model.charset);
  CHECK(loaded.spec.layers.size() == model.spec.layers.size());
  CHECK(loaded.spec.input_freq == model.spec.input_freq);
  for (const auto& l : spec.layers) {
    const auto& a = model.store.at(l.name);
    const auto& b = loaded.store.at(l.name);
    INFO("layer " << l.name);
    REQUIRE(a.kernel.shape == b.kernel.shape);
    REQUIRE(a.kernel.data == b.kernel.data);
    REQUIRE(a.bias.data == b.bias.data);
    REQUIRE(a.bn_var.data == b.bn_var.data);
  }

  save_model(p2, loaded);
  CHECK(slurp(p1) == slurp(p2));

  // Without a charset the manifest simply omits the key.
  ModelFile bare = model;
  bare.charset.clear();
  save_model(p1, bare);
  const ModelFile bare_loaded = load_model(p1);
  CHECK(bare_loaded.charset.empty());
  save_model(p2, bare_loaded);
  CHECK(slurp(p1) == slurp(p2));

  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("weight files reject corruption") {
  const auto spec = NetworkSpec::toy(4);
  ModelFile model;
  model.spec = spec;
  model.store = init_random<float>(spec, 43);

  const std::string good = "test_weights_good.mgw";
  save_model(good, model);
  const std::string bytes = slurp(good);

  SECTION("bad magic") {
    std::string corrupted = bytes;
    corrupted[0] = 'X';
    std::ofstream("test_weights_bad.mgw", std::ios::binary) << corrupted;
    CHECK_THROWS_AS(load_model("test_weights_bad.mgw"), ParseError);
  }
  SECTION("truncated blob") {
    std::ofstream("test_weights_bad.mgw", std::ios::binary)
        << bytes.substr(0, bytes.size() - 16);
    CHECK_THROWS_AS(load_model("test_weights_bad.mgw"), ParseError);
  }
  SECTION("manifest is not JSON") {
    std::string garbage = "MGW1";
    const std::uint64_t len = 9;
    garbage.append(reinterpret_cast<const char*>(&len), 8);
    garbage += "not json!";
    std::ofstream("test_weights_bad.mgw", std::ios::binary) << garbage;
    CHECK_THROWS_AS(load_model("test_weights_bad.mgw"), ParseError);
  }
  SECTION("non-positive batch-norm variance") {
    ModelFile broken = model;
    broken.store.at("C2").bn_var[0] = 0.0f;
    save_model("test_weights_bad.mgw", broken);
    CHECK_THROWS_AS(load_model("test_weights_bad.mgw"), ParseError);
  }
  SECTION("missing file") {
    CHECK_THROWS_AS(load_model("no_such_file.mgw"), ParseError);
  }
  std::remove(good.c_str());
  std::remove("test_weights_bad.mgw");
}
