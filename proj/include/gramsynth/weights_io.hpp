// Copyright (c) 2026 The gramsynth authors
// SPDX-License-Identifier: Apache-2.0
//
// Weight container: "MGW1" magic, a u64 little-endian manifest length, a
// UTF-8 JSON manifest (network spec plus per-array name/shape/offset/length),
// then one raw blob of little-endian float32 values in manifest order.
// Round-trips must be byte-identical, so the manifest is rebuilt through the
// same serializer on save and load paths.

#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gramsynth/network.hpp"
#include "gramsynth/tensor.hpp"

namespace gramsynth {

static_assert(std::endian::native == std::endian::little,
              "weight files are little-endian; big-endian hosts are not supported");

struct ModelFile {
  NetworkSpec spec;
  WeightStore<float> store;
  std::vector<std::string> charset;  // index 0 is the blank; may be empty
};

namespace detail {

inline const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Conv: return "conv";
    case LayerKind::FullyConnected: return "fully-connected";
    case LayerKind::Output: return "output";
  }
  return "conv";
}

inline LayerKind layer_kind_from(const std::string& s) {
  if (s == "conv") return LayerKind::Conv;
  if (s == "fully-connected") return LayerKind::FullyConnected;
  if (s == "output") return LayerKind::Output;
  throw ParseError("weight file: unknown layer kind '" + s + "'");
}

inline nlohmann::json spec_to_json(const NetworkSpec& spec) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : spec.layers) {
    layers.push_back({{"name", l.name},
                      {"kind", layer_kind_name(l.kind)},
                      {"filter_time", l.filter_time},
                      {"filter_freq", l.filter_freq},
                      {"out_channels", l.out_channels},
                      {"pool_time", l.pool_time},
                      {"pool_freq", l.pool_freq},
                      {"dropout_keep", l.dropout_keep}});
  }
  return {{"input_freq", spec.input_freq},
          {"input_channels", spec.input_channels},
          {"vocab_size", spec.vocab_size},
          {"layers", layers}};
}

inline NetworkSpec spec_from_json(const nlohmann::json& j) {
  NetworkSpec spec;
  spec.input_freq = j.at("input_freq").get<long>();
  spec.input_channels = j.at("input_channels").get<long>();
  spec.vocab_size = j.at("vocab_size").get<long>();
  for (const auto& lj : j.at("layers")) {
    LayerSpec l;
    l.name = lj.at("name").get<std::string>();
    l.kind = layer_kind_from(lj.at("kind").get<std::string>());
    l.filter_time = lj.at("filter_time").get<long>();
    l.filter_freq = lj.at("filter_freq").get<long>();
    l.out_channels = lj.at("out_channels").get<long>();
    l.pool_time = lj.at("pool_time").get<long>();
    l.pool_freq = lj.at("pool_freq").get<long>();
    l.dropout_keep = lj.at("dropout_keep").get<double>();
    spec.layers.push_back(l);
  }
  spec.validate();
  return spec;
}

// The arrays of one layer in their fixed serialization order.
inline std::vector<std::pair<std::string, const Tensor<float>*>> layer_arrays(
    const std::string& name, const LayerWeights<float>& w) {
  std::vector<std::pair<std::string, const Tensor<float>*>> out;
  out.emplace_back(name + ".kernel", &w.kernel);
  out.emplace_back(name + ".bias", &w.bias);
  if (!w.bn_scale.data.empty()) {
    out.emplace_back(name + ".bn_scale", &w.bn_scale);
    out.emplace_back(name + ".bn_shift", &w.bn_shift);
    out.emplace_back(name + ".bn_mean", &w.bn_mean);
    out.emplace_back(name + ".bn_var", &w.bn_var);
  }
  return out;
}

}  // namespace detail

inline void save_model(const std::string& path, const ModelFile& model) {
  model.spec.validate();
  nlohmann::json manifest;
  manifest["spec"] = detail::spec_to_json(model.spec);
  if (!model.charset.empty()) manifest["charset"] = model.charset;
  nlohmann::json arrays = nlohmann::json::array();
  std::vector<const Tensor<float>*> blob_order;
  std::uint64_t offset = 0;
  for (const auto& l : model.spec.layers) {
    const LayerWeights<float>& w = model.store.at(l.name);
    for (const auto& [name, tensor] : detail::layer_arrays(l.name, w)) {
      arrays.push_back({{"name", name},
                        {"shape", tensor->shape},
                        {"offset", offset},
                        {"length", static_cast<std::uint64_t>(tensor->size())}});
      blob_order.push_back(tensor);
      offset += static_cast<std::uint64_t>(tensor->size());
    }
  }
  manifest["arrays"] = arrays;
  const std::string text = manifest.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot open '" + path + "' for writing");
  out.write("MGW1", 4);
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), 8);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const Tensor<float>* t : blob_order) {
    out.write(reinterpret_cast<const char*>(t->data.data()),
              static_cast<std::streamsize>(t->data.size() * sizeof(float)));
  }
  if (!out) throw ParseError("short write to '" + path + "'");
}

inline ModelFile load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open weight file '" + path + "'");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != "MGW1") {
    throw ParseError("'" + path + "' is not an MGW1 weight file");
  }
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), 8);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw ParseError("truncated manifest in '" + path + "'");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("bad manifest in '" + path + "': " + e.what());
  }
  ModelFile model;
  try {
    model.spec = detail::spec_from_json(manifest.at("spec"));
    if (manifest.contains("charset")) {
      model.charset = manifest.at("charset").get<std::vector<std::string>>();
    }
    for (const auto& aj : manifest.at("arrays")) {
      const std::string name = aj.at("name").get<std::string>();
      const Shape shape = aj.at("shape").get<Shape>();
      const std::uint64_t length = aj.at("length").get<std::uint64_t>();
      if (static_cast<std::uint64_t>(shape_numel(shape)) != length) {
        throw ParseError("weight file: array " + name + " shape/length mismatch");
      }
      Tensor<float> t(shape);
      in.read(reinterpret_cast<char*>(t.data.data()),
              static_cast<std::streamsize>(length * sizeof(float)));
      if (!in) throw ParseError("truncated blob in '" + path + "' at array " + name);
      const auto dot = name.find('.');
      if (dot == std::string::npos) throw ParseError("weight file: malformed array name " + name);
      const std::string layer = name.substr(0, dot);
      const std::string field = name.substr(dot + 1);
      LayerWeights<float>& lw = model.store.layers[layer];
      if (field == "kernel") lw.kernel = std::move(t);
      else if (field == "bias") lw.bias = std::move(t);
      else if (field == "bn_scale") lw.bn_scale = std::move(t);
      else if (field == "bn_shift") lw.bn_shift = std::move(t);
      else if (field == "bn_mean") lw.bn_mean = std::move(t);
      else if (field == "bn_var") lw.bn_var = std::move(t);
      else throw ParseError("weight file: unknown array field " + field);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("bad manifest in '" + path + "': " + e.what());
  }
  // Every layer in the spec must have arrived with its arrays.
  for (const auto& l : model.spec.layers) {
    const LayerWeights<float>& lw = model.store.at(l.name);
    if (lw.kernel.data.empty() || lw.bias.data.empty()) {
      throw ParseError("weight file: layer " + l.name + " is missing arrays");
    }
    for (long c = 0; c < lw.bn_var.size(); ++c) {
      if (!(lw.bn_var[c] > 0.0f)) {
        throw ParseError("weight file: layer " + l.name + " has non-positive variance");
      }
    }
  }
  return model;
}

}  // namespace gramsynth
