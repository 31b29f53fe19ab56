// Copyright 2026 The FEAT Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// EditModel archives: a reproducible tar holding manifest.json plus one
// tensor file per parameter, all in f64 so a save/load round trip is exact.
//
//   manifest.json
//   mapper/net<n>/weight<k>.feat, mapper/net<n>/bias<k>.feat
//   attention/reduction<l>.feat, attention/fusion.feat[, attention/fusion_bias.feat]
//   frozen_mask.feat (two-step models with a single fixed mask)

#pragma once

#include <json.hpp>

#include <string>
#include <vector>

#include "feat/editor.hpp"
#include "feat/error.hpp"
#include "feat/generator.hpp"
#include "feat/io/archive.hpp"
#include "feat/io/tensor_file.hpp"

namespace feat::io {

inline constexpr int kModelFormatVersion = 1;

inline nlohmann::json edit_config_json(const EditConfig& e) {
  return {{"blend_layer", e.blend_layer},
          {"alpha", e.alpha},
          {"tau", e.tau},
          {"scope", e.scope.layers()},
          {"mask_mode", to_string(e.mask_mode)},
          {"mute_attention", e.mute_attention},
          {"attention_resize", e.attention_resize == ad::ResizeMode::kNearest ? "nearest" : "bilinear"}};
}

inline EditConfig edit_config_from_json(const nlohmann::json& j) {
  EditConfig e;
  e.blend_layer = j.at("blend_layer").get<std::size_t>();
  e.alpha = j.at("alpha").get<double>();
  e.tau = j.at("tau").get<double>();
  e.scope = EditScope(j.at("scope").get<std::vector<std::size_t>>());
  e.mask_mode = j.at("mask_mode").get<std::string>() == "soft" ? MaskMode::kSoft : MaskMode::kHard;
  e.mute_attention = j.at("mute_attention").get<bool>();
  e.attention_resize =
      j.at("attention_resize").get<std::string>() == "nearest" ? ad::ResizeMode::kNearest : ad::ResizeMode::kBilinear;
  return e;
}

inline nlohmann::json generator_config_json(const GeneratorConfig& g) {
  return {{"z_dim", g.z_dim},
          {"w_dim", g.w_dim},
          {"num_layers", g.num_layers},
          {"base_resolution", g.base_resolution},
          {"channels", g.channel_schedule()},
          {"mapping_layers", g.mapping_layers},
          {"noise_enabled", g.noise_enabled},
          {"style_gain", g.style_gain},
          {"seed", g.seed}};
}

inline std::string model_manifest(const EditModel& m, const GeneratorConfig& gen) {
  nlohmann::json j;
  j["format_version"] = kModelFormatVersion;
  j["prompt"] = m.prompt;
  j["generator_fingerprint"] = hex64(m.generator_fingerprint);
  j["generator"] = generator_config_json(gen);
  j["edit"] = edit_config_json(m.config);
  j["mapper"] = {{"nets", m.mapper.nets.size()},
                 {"per_layer", m.mapper.per_layer},
                 {"hidden", m.mapper.hidden()},
                 {"w_dim", m.mapper.w_dim()}};
  j["attention"] = {{"layers", m.attention.reductions.size()},
                    {"reduced_channels", m.attention.reduced_channels()},
                    {"use_bias", m.attention.use_bias}};
  j["frozen_mask"] = m.frozen_mask.has_value();
  return j.dump(2) + "\n";
}

/// Archive bytes of `m`; identical models give identical bytes.
inline std::string encode_model(const EditModel& m, const GeneratorConfig& gen) {
  std::vector<ArchiveEntry> entries;
  entries.push_back({"manifest.json", model_manifest(m, gen)});
  for (std::size_t n = 0; n < m.mapper.nets.size(); ++n) {
    const MlpParams& net = m.mapper.nets[n];
    for (std::size_t k = 0; k < net.weights.size(); ++k) {
      const std::string dir = "mapper/net" + std::to_string(n) + "/";
      entries.push_back({dir + "weight" + std::to_string(k) + ".feat", encode_tensor(net.weights[k])});
      entries.push_back({dir + "bias" + std::to_string(k) + ".feat", encode_tensor(net.biases[k])});
    }
  }
  for (std::size_t l = 0; l < m.attention.reductions.size(); ++l) {
    entries.push_back({"attention/reduction" + std::to_string(l + 1) + ".feat",
                       encode_tensor(m.attention.reductions[l])});
  }
  entries.push_back({"attention/fusion.feat", encode_tensor(m.attention.fusion)});
  if (m.attention.use_bias) {
    entries.push_back({"attention/fusion_bias.feat", encode_tensor(m.attention.fusion_bias)});
  }
  if (m.frozen_mask) entries.push_back({"frozen_mask.feat", encode_tensor(m.frozen_mask->values)});
  return write_tar(entries);
}

struct LoadedModel {
  EditModel model;
  GeneratorConfig generator;
};

inline LoadedModel decode_model(const std::string& bytes) {
  const auto entries = read_tar(bytes);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(find_entry(entries, "manifest.json").data);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model manifest: ") + e.what());
  }
  try {
    if (j.at("format_version").get<int>() != kModelFormatVersion) {
      throw FormatError("model archive: unsupported format_version " + j["format_version"].dump());
    }
    LoadedModel out;
    EditModel& m = out.model;
    m.prompt = j.at("prompt").get<std::string>();
    m.generator_fingerprint = std::stoull(j.at("generator_fingerprint").get<std::string>(), nullptr, 16);
    m.config = edit_config_from_json(j.at("edit"));
    const auto& g = j.at("generator");
    GeneratorConfig& gc = out.generator;
    gc.z_dim = g.at("z_dim");
    gc.w_dim = g.at("w_dim");
    gc.num_layers = g.at("num_layers");
    gc.base_resolution = g.at("base_resolution");
    gc.channels = g.at("channels").get<std::vector<std::size_t>>();
    gc.mapping_layers = g.at("mapping_layers");
    gc.noise_enabled = g.at("noise_enabled");
    gc.style_gain = g.at("style_gain");
    gc.seed = g.at("seed");

    const std::size_t nets = j.at("mapper").at("nets");
    m.mapper.per_layer = j.at("mapper").at("per_layer");
    for (std::size_t n = 0; n < nets; ++n) {
      MlpParams net;
      for (std::size_t k = 0; k < 3; ++k) {
        const std::string dir = "mapper/net" + std::to_string(n) + "/";
        net.weights.push_back(decode_tensor(find_entry(entries, dir + "weight" + std::to_string(k) + ".feat").data).tensor);
        net.biases.push_back(decode_tensor(find_entry(entries, dir + "bias" + std::to_string(k) + ".feat").data).tensor);
      }
      m.mapper.nets.push_back(std::move(net));
    }
    m.mapper.validate();
    const std::size_t layers = j.at("attention").at("layers");
    for (std::size_t l = 1; l <= layers; ++l) {
      m.attention.reductions.push_back(
          decode_tensor(find_entry(entries, "attention/reduction" + std::to_string(l) + ".feat").data).tensor);
    }
    m.attention.fusion = decode_tensor(find_entry(entries, "attention/fusion.feat").data).tensor;
    m.attention.use_bias = j.at("attention").at("use_bias");
    if (m.attention.use_bias) {
      m.attention.fusion_bias = decode_tensor(find_entry(entries, "attention/fusion_bias.feat").data).tensor;
    }
    m.attention.validate(gc);
    if (j.at("frozen_mask").get<bool>()) {
      m.frozen_mask = AttentionMask{decode_tensor(find_entry(entries, "frozen_mask.feat").data).tensor};
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model manifest: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("model archive: ") + e.what());
  }
}

inline void save_model(const std::string& path, const EditModel& m, const GeneratorConfig& gen) {
  write_file(path, encode_model(m, gen));
}

inline LoadedModel load_model(const std::string& path) { return decode_model(read_file(path)); }

}  // namespace feat::io
