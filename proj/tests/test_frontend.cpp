// Copyright (c) 2026 The gramsynth authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "gramsynth/frontend.hpp"
#include "gramsynth/gradcheck.hpp"
#include "gramsynth/random.hpp"
#include "gramsynth/stft.hpp"

using namespace gramsynth;

namespace {

Waveform sine_wave(double freq_hz, double amplitude, double seconds, long sr = 16000) {
  Waveform w;
  w.sample_rate_hz = sr;
  const long n = static_cast<long>(seconds * static_cast<double>(sr));
  w.samples.resize(static_cast<size_t>(n));
  for (long i = 0; i < n; ++i) {
    w.samples[static_cast<size_t>(i)] =
        amplitude * std::sin(2.0 * M_PI * freq_hz * static_cast<double>(i) / static_cast<double>(sr));
  }
  return w;
}

Waveform noise_wave(long n, std::uint64_t seed, double amplitude = 0.5) {
  Waveform w;
  Rng rng(seed);
  w.samples.resize(static_cast<size_t>(n));
  for (auto& s : w.samples) s = rng.uniform(-amplitude, amplitude);
  return w;
}

}  // namespace

TEST_CASE("frame counts follow the hop arithmetic") {
  const FrontendConfig cfg = FrontendConfig::paper();
  CHECK(frame_count(16000, cfg) == 98);
  CHECK(frame_count(400, cfg) == 1);
  CHECK(frame_count(399, cfg) == 0);
  CHECK(frame_count(560, cfg) == 2);
}

TEST_CASE("a constant frame of ones reproduces the Hamming window") {
  const FrontendMatrices<double> mats(FrontendConfig::paper());
  Tape<double> tape;
  auto wave = tape.constant(Tensor<double>(Shape{400}, 1.0));
  auto nodes = features_from_waveform(tape, wave, mats);
  const Tensor<double>& frames = tape.value(nodes.frames);
  REQUIRE(frames.shape == Shape{1, 400});
  for (long n = 0; n < 400; ++n) {
    const double expect = 0.54 - 0.46 * std::cos(2.0 * M_PI * n / 399.0);
    CHECK(frames[n] == Catch::Approx(expect).margin(1e-15));
  }
}

TEST_CASE("smooth modulus floor on silence") {
  const FrontendMatrices<double> mats(FrontendConfig::paper());
  Tape<double> tape;
  auto wave = tape.constant(Tensor<double>(Shape{800}, 0.0));
  auto nodes = features_from_waveform(tape, wave, mats);
  const Tensor<double>& mag = tape.value(nodes.magnitude);
  for (long i = 0; i < mag.size(); ++i) {
    CHECK(mag[i] == Catch::Approx(0.0316228).margin(1e-6));
  }
}

TEST_CASE("smooth modulus formula at re=3, im=4") {
  Tape<double> tape;
  auto re = tape.constant(Tensor<double>::scalar(3.0));
  auto im = tape.constant(Tensor<double>::scalar(4.0));
  auto mag = tape.sqrt(tape.add_scalar(tape.add(tape.square(re), tape.square(im)), 1e-3));
  CHECK(tape.value(mag)[0] == Catch::Approx(std::sqrt(25.001)).margin(1e-12));
  CHECK(tape.value(mag)[0] == Catch::Approx(5.00010).margin(1e-5));
}

TEST_CASE("1 kHz sine peaks in bin 32") {
  const FrontendMatrices<double> mats(FrontendConfig::paper());
  const Waveform w = sine_wave(1000.0, 1.0, 0.2);
  Tape<double> tape;
  auto wave = tape.constant(Tensor<double>(Shape{w.length()}, w.samples));
  auto nodes = features_from_waveform(tape, wave, mats);
  const Tensor<double>& mag = tape.value(nodes.magnitude);
  const long T = mag.shape[0], B = mag.shape[1];
  const long t = T / 2;
  long argmax = 0;
  for (long k = 1; k < B; ++k) {
    if (mag.at2(t, k) > mag.at2(t, argmax)) argmax = k;
  }
  CHECK(argmax == 32);
}

TEST_CASE("filterbank layout") {
  SECTION("paper scale: 32 linear copies then mel triangles") {
    const FrontendConfig cfg = FrontendConfig::paper();
    CHECK(cfg.linear_channel_count() == 32);
    const Tensor<double> fb = build_filterbank<double>(cfg);
    REQUIRE(fb.shape == Shape{257, 80});
    for (long c = 0; c < 32; ++c) {
      for (long k = 0; k < 257; ++k) {
        CHECK(fb.at2(k, c) == (k == c ? 1.0 : 0.0));
      }
    }
    for (long c = 32; c < 80; ++c) {
      double colsum = 0.0;
      int direction_changes = 0;
      double prev = 0.0;
      bool falling = false;
      for (long k = 0; k < 257; ++k) {
        const double v = fb.at2(k, c);
        CHECK(v >= 0.0);
        colsum += v;
        if (v < prev) falling = true;
        if (falling && v > prev) direction_changes++;  // would mean a second peak
        prev = v;
      }
      CHECK(colsum > 0.0);
      CHECK(direction_changes == 0);
    }
  }
  SECTION("toy scale: 8 linear channels under the 250 Hz boundary") {
    const FrontendConfig cfg = FrontendConfig::toy();
    CHECK(cfg.linear_channel_count() == 8);
    const Tensor<double> fb = build_filterbank<double>(cfg);
    REQUIRE(fb.shape == Shape{257, 20});
  }
  SECTION("insufficient channels are rejected") {
    FrontendConfig cfg = FrontendConfig::paper();
    cfg.num_channels = 20;  // 32 linear bins cannot fit
    CHECK_THROWS_AS(build_filterbank<double>(cfg), ParseError);
    FrontendConfig bad = FrontendConfig::paper();
    bad.window_len_samples = 600;
    CHECK_THROWS_AS(bad.validate(), ParseError);
  }
}

TEST_CASE("deltas vanish on time-constant features") {
  const FrontendMatrices<double> mats(FrontendConfig::paper());
  Tape<double> tape;
  Tensor<double> mag(Shape{7, 257});
  for (long t = 0; t < 7; ++t) {
    for (long k = 0; k < 257; ++k) mag.at2(t, k) = 0.01 * static_cast<double>(k + 1);
  }
  auto nodes = features_from_magnitude(tape, tape.constant(mag), mats);
  const Tensor<double>& d1 = tape.value(nodes.delta);
  const Tensor<double>& d2 = tape.value(nodes.delta_delta);
  for (long i = 0; i < d1.size(); ++i) {
    CHECK(d1[i] == Catch::Approx(0.0).margin(1e-12));
    CHECK(d2[i] == Catch::Approx(0.0).margin(1e-12));
  }
}

TEST_CASE("silence features compose the floor values") {
  const FrontendConfig cfg = FrontendConfig::paper();
  const FrontendMatrices<double> mats(cfg);
  Tape<double> tape;
  auto wave = tape.constant(Tensor<double>(Shape{1200}, 0.0));
  auto nodes = features_from_waveform(tape, wave, mats);
  const Tensor<double>& feat = tape.value(nodes.features);
  REQUIRE(feat.shape == Shape{6, 80, 3});
  const double floor_mag = std::sqrt(cfg.modulus_epsilon);
  for (long c = 0; c < 80; ++c) {
    double colsum = 0.0;
    for (long k = 0; k < 257; ++k) colsum += mats.filterbank.at2(k, c);
    const double expect = std::log(floor_mag * colsum + cfg.log_floor);
    for (long t = 0; t < 6; ++t) {
      CHECK(feat.at3(t, c, 0) == Catch::Approx(expect).margin(1e-9));
      CHECK(feat.at3(t, c, 1) == Catch::Approx(0.0).margin(1e-12));  // deltas of a constant
      CHECK(feat.at3(t, c, 2) == Catch::Approx(0.0).margin(1e-12));
    }
  }
}

TEST_CASE("waveform path factors through the magnitude path bit-identically") {
  const FrontendMatrices<double> mats(FrontendConfig::paper());
  const Waveform w = noise_wave(1600, 77);
  Tape<double> t1;
  auto wave = t1.constant(Tensor<double>(Shape{w.length()}, w.samples));
  auto n1 = features_from_waveform(t1, wave, mats);
  Tape<double> t2;
  auto n2 = features_from_magnitude(t2, t2.constant(t1.value(n1.magnitude)), mats);
  const Tensor<double>& f1 = t1.value(n1.features);
  const Tensor<double>& f2 = t2.value(n2.features);
  REQUIRE(f1.shape == f2.shape);
  CHECK(f1.data == f2.data);  // bitwise
}

TEST_CASE("features shift by one row under a one-hop delay") {
  const FrontendMatrices<double> mats(FrontendConfig::paper());
  const Waveform w = noise_wave(3200, 5);
  Waveform advanced;
  advanced.samples.assign(w.samples.begin() + 160, w.samples.end());
  Tape<double> t1, t2;
  auto f1 = features_from_waveform(t1, t1.constant(Tensor<double>(Shape{w.length()}, w.samples)), mats);
  auto f2 = features_from_waveform(
      t2, t2.constant(Tensor<double>(Shape{advanced.length()}, advanced.samples)), mats);
  const Tensor<double>& a = t1.value(f1.features);
  const Tensor<double>& b = t2.value(f2.features);
  const long Ta = a.shape[0], Tb = b.shape[0];
  // Delta-delta rows mix log-mel rows up to 4 frames away, and the replicate
  // padding sits at different offsets in the two signals; compare only rows
  // whose whole receptive field is interior on both sides.
  const long lo = 4, hi = std::min(Tb - 5, Ta - 6);
  REQUIRE(lo < hi);
  for (long t = lo; t <= hi; ++t) {
    for (long c = 0; c < 80; ++c) {
      for (long ch = 0; ch < 3; ++ch) {
        CHECK(b.at3(t, c, ch) == Catch::Approx(a.at3(t + 1, c, ch)).margin(1e-6));
      }
    }
  }
}

TEST_CASE("feature pipeline gradients reach the waveform") {
  const FrontendMatrices<double> mats(FrontendConfig::paper());
  Tape<double> tape;
  const Waveform w = noise_wave(720, 13, 0.3);
  auto wave = tape.variable(Tensor<double>(Shape{w.length()}, w.samples));
  auto nodes = features_from_waveform(tape, wave, mats);
  auto loss = tape.sum_all(nodes.features);
  const auto rep = finite_diff_check(tape, loss, {wave});
  INFO("max rel err " << rep.max_rel_err << " analytic " << rep.worst_analytic << " numeric "
                      << rep.worst_numeric);
  CHECK(rep.passed(1e-4));
}

TEST_CASE("too-short waveforms are rejected") {
  const FrontendMatrices<double> mats(FrontendConfig::paper());
  Tape<double> tape;
  auto wave = tape.constant(Tensor<double>(Shape{399}, 0.0));
  CHECK_THROWS_AS(features_from_waveform(tape, wave, mats), ShapeError);
}

TEST_CASE("istft inverts stft") {
  const Stft stft(FrontendConfig::paper());
  // 3280 samples = 19 hops + one window, so the frames tile the signal
  // exactly and the output length matches the input.
  const Waveform w = noise_wave(3280, 21);
  Tensor<double> re, im;
  stft.analyze(w.samples, re, im);
  const Waveform back = stft.synthesize(re, im);
  REQUIRE(back.samples.size() == w.samples.size());
  double peak = 0.0;
  for (double s : w.samples) peak = std::max(peak, std::abs(s));
  for (size_t i = 400; i + 400 < w.samples.size(); ++i) {
    CHECK(std::abs(back.samples[i] - w.samples[i]) < 1e-6 * peak);
  }
}

TEST_CASE("zero spectrogram synthesizes silence") {
  const Stft stft(FrontendConfig::paper());
  Tensor<double> re(Shape{4, 257}), im(Shape{4, 257});
  const Waveform out = stft.synthesize(re, im);
  for (double s : out.samples) CHECK(s == 0.0);
}

TEST_CASE("impulse-spectrum frame satisfies Parseval") {
  const Stft stft(FrontendConfig::paper());
  const long B = 257, n0 = 137;
  std::vector<double> re(B), im(B);
  double spec_energy = 0.0;
  for (long k = 0; k < B; ++k) {
    const double phase = -2.0 * M_PI * static_cast<double>(n0 * k) / 512.0;
    re[static_cast<size_t>(k)] = std::cos(phase);
    im[static_cast<size_t>(k)] = std::sin(phase);
    const double w = (k == 0 || k == B - 1) ? 1.0 : 2.0;
    spec_energy += w;
  }
  const std::vector<double> frame = stft.idft_frame(re.data(), im.data());
  double energy = 0.0;
  for (long n = 0; n < 512; ++n) {
    energy += frame[static_cast<size_t>(n)] * frame[static_cast<size_t>(n)];
    const double expect = (n == n0) ? 1.0 : 0.0;
    CHECK(frame[static_cast<size_t>(n)] == Catch::Approx(expect).margin(1e-9));
  }
  CHECK(energy == Catch::Approx(spec_energy / 512.0).margin(1e-6));
}

TEST_CASE("griffin-lim reconstructs a 440 Hz sine") {
  const FrontendConfig cfg = FrontendConfig::paper();
  const Stft stft(cfg);
  const Waveform w = sine_wave(440.0, 0.8, 1.0);
  const Tensor<double> mag = stft.magnitude(w.samples);
  const GriffinLimResult r = griffin_lim(mag, cfg, 100, 8);
  REQUIRE(r.sc_trace.size() == 100);
  CHECK(r.sc_trace.back() < 0.05);
  for (size_t i = 1; i < r.sc_trace.size(); ++i) {
    CHECK(r.sc_trace[i] <= r.sc_trace[i - 1] + 1e-6);
  }
  // Determinism per seed, variation across seeds.
  const GriffinLimResult again = griffin_lim(mag, cfg, 5, 1);
  const GriffinLimResult other = griffin_lim(mag, cfg, 5, 2);
  const GriffinLimResult five = griffin_lim(mag, cfg, 5, 1);
  CHECK(again.waveform.samples == five.waveform.samples);
  CHECK(again.waveform.samples != other.waveform.samples);
}

TEST_CASE("griffin-lim on zero magnitude is silent with SC zero") {
  const FrontendConfig cfg = FrontendConfig::paper();
  Tensor<double> mag(Shape{5, 257});
  const GriffinLimResult r = griffin_lim(mag, cfg, 10, 3);
  CHECK(r.sc_trace == std::vector<double>(10, 0.0));
  for (double s : r.waveform.samples) CHECK(s == 0.0);
}
