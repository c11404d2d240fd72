// Copyright (c) 2026 The gramsynth authors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: a flat UTF-8 key=value file with [section] headers,
// full-line '#' comments, and nothing clever. Every key is validated at
// parse time and unknown sections or keys are rejected outright, so a typo
// fails the run instead of silently keeping a default.
//
//   [loss]
//   style_weight = 1e5
//   style_layers = C0,C1,C2,C3,C4,C5
//   [optim]
//   stage1_iters = 500
//   [run]
//   seed = 7
//   precision = single

#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "gramsynth/losses.hpp"
#include "gramsynth/network.hpp"
#include "gramsynth/tensor.hpp"

namespace gramsynth {

enum class Precision { High, Single };

inline Precision precision_from(const std::string& s) {
  if (s == "high") return Precision::High;
  if (s == "single") return Precision::Single;
  throw ParseError("precision '" + s + "' unknown (use high or single)");
}

struct RunConfig {
  // [io] -- command-line flags take precedence over these.
  std::string content_path;
  std::vector<std::string> style_paths;
  std::string weights_path;
  std::string output_path;

  // [loss] -- layer lists empty means the documented defaults (style on the
  // first six convs, content on deeper convs and fully-connected layers).
  double style_weight = 1e5;
  double content_weight = 0.2;
  double fc_weight = 10.0;
  double energy_weight = 1.0;
  std::vector<std::string> style_layers;
  std::vector<std::string> content_layers;

  // [optim]
  long stage1_iters = 1000;
  long stage2_iters = 1000;
  long griffin_lim_iters = 100;

  // [run]
  std::uint64_t seed = 0;
  Precision precision = Precision::High;

  static RunConfig parse(const std::string& text, const std::string& origin = "config");

  static RunConfig from_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open config file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
  }

  /// Builds the conversion loss for a network: named layer lists when given,
  /// otherwise the voice-conversion defaults, both reweighted by the
  /// configured term weights.
  LossSpec loss_spec(const NetworkSpec& net) const {
    LossSpec s;
    auto weight_for = [&](const LayerSpec& l) {
      return l.kind == LayerKind::FullyConnected ? fc_weight : content_weight;
    };
    if (style_layers.empty() && content_layers.empty()) {
      s = LossSpec::voice_conversion_defaults(net);
      for (auto& t : s.terms) {
        if (t.role == LossRole::Style) {
          t.weight = style_weight;
        } else {
          t.weight = weight_for(*net.find(t.layer));
        }
      }
    } else {
      for (const auto& name : style_layers) {
        if (net.find(name) == nullptr) throw ParseError("config: unknown style layer " + name);
        s.terms.push_back({name, LossRole::Style, style_weight});
      }
      for (const auto& name : content_layers) {
        const LayerSpec* l = net.find(name);
        if (l == nullptr) throw ParseError("config: unknown content layer " + name);
        s.terms.push_back({name, LossRole::Content, weight_for(*l)});
      }
    }
    s.energy_weight = energy_weight;
    s.validate();
    return s;
  }
};

namespace detail {

inline std::string config_trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline std::vector<std::string> config_list(const std::string& s) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    const std::size_t comma = s.find(',', pos);
    const std::string item =
        config_trim(comma == std::string::npos ? s.substr(pos) : s.substr(pos, comma - pos));
    if (!item.empty()) out.push_back(item);
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

inline double config_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const char* end = v.data() + v.size();
  const auto res = std::from_chars(v.data(), end, out);
  if (res.ec != std::errc{} || res.ptr != end) {
    throw ParseError("config: key " + key + " needs a number, got '" + v + "'");
  }
  return out;
}

inline long config_long(const std::string& key, const std::string& v) {
  long out = 0;
  const char* end = v.data() + v.size();
  const auto res = std::from_chars(v.data(), end, out);
  if (res.ec != std::errc{} || res.ptr != end) {
    throw ParseError("config: key " + key + " needs an integer, got '" + v + "'");
  }
  return out;
}

inline std::uint64_t config_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const char* end = v.data() + v.size();
  const auto res = std::from_chars(v.data(), end, out);
  if (res.ec != std::errc{} || res.ptr != end) {
    throw ParseError("config: key " + key + " needs an unsigned integer, got '" + v + "'");
  }
  return out;
}

}  // namespace detail

inline RunConfig RunConfig::parse(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  std::string section;
  std::vector<std::string> seen;
  std::istringstream in(text);
  std::string raw;
  long lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const std::string line = detail::config_trim(raw);
    auto fail = [&](const std::string& what) {
      throw ParseError(origin + ":" + std::to_string(lineno) + ": " + what);
    };
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail("unterminated section header");
      section = detail::config_trim(line.substr(1, line.size() - 2));
      if (section != "io" && section != "loss" && section != "optim" && section != "run") {
        fail("unknown section [" + section + "]");
      }
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) fail("expected key = value");
    const std::string key = section + "." + detail::config_trim(line.substr(0, eq));
    const std::string value = detail::config_trim(line.substr(eq + 1));
    for (const auto& k : seen) {
      if (k == key) fail("duplicate key " + key);
    }
    seen.push_back(key);

    if (key == "io.content") {
      cfg.content_path = value;
    } else if (key == "io.style") {
      cfg.style_paths = detail::config_list(value);
    } else if (key == "io.weights") {
      cfg.weights_path = value;
    } else if (key == "io.output") {
      cfg.output_path = value;
    } else if (key == "loss.style_weight") {
      cfg.style_weight = detail::config_double(key, value);
    } else if (key == "loss.content_weight") {
      cfg.content_weight = detail::config_double(key, value);
    } else if (key == "loss.fc_weight") {
      cfg.fc_weight = detail::config_double(key, value);
    } else if (key == "loss.energy_weight") {
      cfg.energy_weight = detail::config_double(key, value);
    } else if (key == "loss.style_layers") {
      cfg.style_layers = detail::config_list(value);
    } else if (key == "loss.content_layers") {
      cfg.content_layers = detail::config_list(value);
    } else if (key == "optim.stage1_iters") {
      cfg.stage1_iters = detail::config_long(key, value);
    } else if (key == "optim.stage2_iters") {
      cfg.stage2_iters = detail::config_long(key, value);
    } else if (key == "optim.griffin_lim_iters") {
      cfg.griffin_lim_iters = detail::config_long(key, value);
    } else if (key == "run.seed") {
      cfg.seed = detail::config_u64(key, value);
    } else if (key == "run.precision") {
      cfg.precision = precision_from(value);
    } else {
      fail("unknown key " + key);
    }
  }

  if (cfg.style_weight < 0 || cfg.content_weight < 0 || cfg.fc_weight < 0 ||
      cfg.energy_weight < 0) {
    throw ParseError(origin + ": loss weights must be non-negative");
  }
  if (cfg.stage1_iters < 0 || cfg.stage2_iters < 0) {
    throw ParseError(origin + ": optimizer budgets must be non-negative");
  }
  if (cfg.griffin_lim_iters < 1) {
    throw ParseError(origin + ": griffin_lim_iters must be at least 1");
  }
  return cfg;
}

}  // namespace gramsynth
