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

// Run configuration: the JSON document every CLI command reads. Parsing
// validates against the embedded schema first, so unknown keys and type
// errors are reported with their JSON path before any work starts.

#pragma once

#include <json.hpp>

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "feat/editor.hpp"
#include "feat/embedders.hpp"
#include "feat/error.hpp"
#include "feat/generator.hpp"
#include "feat/io/json_schema.hpp"
#include "feat/io/tensor_file.hpp"
#include "feat/trainer.hpp"

namespace feat {

/// Contents of schemas/run_config.schema.json.
inline constexpr const char* kRunConfigSchema = R"SCHEMA({
  "$schema": "https://json-schema.org/draft/2020-12/schema",
  "title": "feat run configuration",
  "type": "object",
  "additionalProperties": false,
  "required": ["format_version"],
  "properties": {
    "format_version": {"type": "integer", "enum": [1]},
    "output_dir": {"type": "string"},
    "prompt": {"type": "string"},
    "prompt2": {"type": "string"},
    "generator": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "z_dim": {"type": "integer", "minimum": 1},
        "w_dim": {"type": "integer", "minimum": 1},
        "num_layers": {"type": "integer", "minimum": 2},
        "base_resolution": {"type": "integer", "minimum": 1},
        "channels": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        "mapping_layers": {"type": "integer", "minimum": 1},
        "noise_enabled": {"type": "boolean"},
        "style_gain": {"type": "number", "exclusiveMinimum": 0},
        "seed": {"type": "integer", "minimum": 0}
      }
    },
    "train": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "learning_rate": {"type": "number", "exclusiveMinimum": 0},
        "batch_size": {"type": "integer", "minimum": 1},
        "iterations": {"type": "integer", "minimum": 0},
        "beta1": {"type": "number", "minimum": 0, "maximum": 1},
        "beta2": {"type": "number", "minimum": 0, "maximum": 1},
        "adam_eps": {"type": "number", "exclusiveMinimum": 0},
        "seed": {"type": "integer", "minimum": 0},
        "log_every": {"type": "integer", "minimum": 1},
        "lambda_att": {"type": "number", "minimum": 0},
        "lambda_tv": {"type": "number", "minimum": 0},
        "lambda_l2": {"type": "number", "minimum": 0},
        "tv_mode": {"enum": ["absolute", "squared"]},
        "mapper_hidden": {"type": "integer", "minimum": 1},
        "per_layer_mapper": {"type": "boolean"},
        "attention_channels": {"type": "integer", "minimum": 1},
        "attention_bias": {"type": "boolean"},
        "frozen_mask": {"enum": ["per_sample", "canonical"]}
      }
    },
    "edit": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "blend_layer": {"type": "integer", "minimum": 1},
        "alpha": {"type": "number"},
        "tau": {"type": "number", "minimum": 0, "maximum": 1},
        "scope": {
          "oneOf": [
            {"enum": ["all"]},
            {"type": "integer", "minimum": 1},
            {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 1}}
          ]
        },
        "mask_mode": {"enum": ["soft", "hard"]},
        "mute_attention": {"type": "boolean"},
        "attention_resize": {"enum": ["bilinear", "nearest"]}
      }
    },
    "embedder": {
      "type": "object",
      "additionalProperties": false,
      "required": ["type"],
      "properties": {
        "type": {"enum": ["region_stat", "projection"]},
        "dim": {"type": "integer", "minimum": 1},
        "resolution": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "region": {"type": "array", "minItems": 4, "maxItems": 4, "items": {"type": "integer", "minimum": 0}},
        "shared_weight": {"type": "number", "minimum": 0},
        "pool_grid": {"type": "integer", "minimum": 1},
        "vocabulary_file": {"type": "string"},
        "color_tokens": {
          "type": "object",
          "additionalProperties": {"type": "array", "minItems": 3, "maxItems": 3, "items": {"type": "number"}}
        }
      }
    },
    "eval": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "num_samples": {"type": "integer", "minimum": 0},
        "seed": {"type": "integer", "minimum": 0},
        "embedder_dim": {"type": "integer", "minimum": 1},
        "embedder_seed": {"type": "integer", "minimum": 0}
      }
    },
    "gradcheck": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "epsilon": {"type": "number", "exclusiveMinimum": 0},
        "num_coords": {"type": "integer", "minimum": 1},
        "tolerance": {"type": "number", "exclusiveMinimum": 0},
        "seed": {"type": "integer", "minimum": 0},
        "warm_scale": {"type": "number", "minimum": 0},
        "denominator_floor": {"type": "number", "exclusiveMinimum": 0}
      }
    }
  }
})SCHEMA";

struct EmbedderSpec {
  std::string type = "region_stat";
  std::size_t dim = 16;
  std::size_t resolution = 32;
  std::uint64_t seed = 3;
  Region region{0, 0, 16, 16};
  double shared_weight = 0.0;
  std::size_t pool_grid = 8;
  std::vector<std::pair<std::string, std::array<double, 3>>> color_tokens{{"red", {1.0, -1.0, -1.0}}};
  /// JSON object {token: [D numbers]} merged into the vocabulary.
  std::string vocabulary_file;
};

/// Evaluation draws latents from `seed` and embeds originals and edits with
/// a ProjectionEmbedder(embedder_dim, output resolution, embedder_seed).
struct EvalSpec {
  std::size_t num_samples = 256;
  std::uint64_t seed = 1234;
  std::size_t embedder_dim = 16;
  std::uint64_t embedder_seed = 77;
};

struct GradCheckSpec {
  double epsilon = 1e-5;
  std::size_t num_coords = 64;
  double tolerance = 1e-4;
  std::uint64_t seed = 0;
  double warm_scale = 0.05;
  double denominator_floor = 1e-6;
};

struct RunConfig {
  int format_version = 1;
  std::string output_dir = "out";
  std::string prompt = "red";
  std::string prompt2;
  GeneratorConfig generator;
  TrainConfig train;
  FrozenMaskMode frozen_mask = FrozenMaskMode::kPerSample;
  EmbedderSpec embedder;
  EvalSpec eval;
  GradCheckSpec gradcheck;
};

inline std::unique_ptr<JointEmbedder> make_embedder(const EmbedderSpec& s) {
  if (s.type == "projection") {
    return std::make_unique<ProjectionEmbedder>(s.dim, s.resolution, s.seed, s.pool_grid);
  }
  auto e = std::make_unique<RegionStatEmbedder>(s.dim, s.resolution, s.region, s.seed, s.shared_weight);
  for (const auto& [name, rgb] : s.color_tokens) e->add_color_token(name, rgb);
  if (!s.vocabulary_file.empty()) {
    nlohmann::json vocab;
    try {
      vocab = nlohmann::json::parse(io::read_file(s.vocabulary_file));
    } catch (const nlohmann::json::exception& ex) {
      throw ConfigError(s.vocabulary_file + ": " + ex.what());
    } catch (const FormatError& ex) {
      throw ConfigError(ex.what());
    }
    if (!vocab.is_object()) throw ConfigError(s.vocabulary_file + ": expected an object of token vectors");
    for (auto it = vocab.begin(); it != vocab.end(); ++it) {
      if (!it.value().is_array()) throw ConfigError(s.vocabulary_file + ": token '" + it.key() + "' is not an array");
      e->add_token(it.key(), it.value().get<std::vector<double>>());
    }
  }
  return e;
}

namespace detail {

inline RunConfig parse_run_config_unchecked(const nlohmann::json& j) {
  static const nlohmann::json schema = nlohmann::json::parse(kRunConfigSchema);
  const auto issues = io::validate_schema(j, schema);
  if (!issues.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& i : issues) msg += "\n  " + i.path + ": " + i.message;
    throw ConfigError(msg);
  }
  RunConfig c;
  c.output_dir = j.value("output_dir", c.output_dir);
  c.prompt = j.value("prompt", c.prompt);
  c.prompt2 = j.value("prompt2", c.prompt2);

  const auto g = j.value("generator", nlohmann::json::object());
  GeneratorConfig& gc = c.generator;
  gc.z_dim = g.value("z_dim", gc.z_dim);
  gc.w_dim = g.value("w_dim", gc.w_dim);
  gc.num_layers = g.value("num_layers", gc.num_layers);
  gc.base_resolution = g.value("base_resolution", gc.base_resolution);
  gc.channels = g.value("channels", gc.channels);
  gc.mapping_layers = g.value("mapping_layers", gc.mapping_layers);
  gc.noise_enabled = g.value("noise_enabled", gc.noise_enabled);
  gc.style_gain = g.value("style_gain", gc.style_gain);
  gc.seed = g.value("seed", gc.seed);
  gc.validate();

  const auto t = j.value("train", nlohmann::json::object());
  TrainConfig& tc = c.train;
  tc.learning_rate = t.value("learning_rate", tc.learning_rate);
  tc.batch_size = t.value("batch_size", tc.batch_size);
  tc.iterations = t.value("iterations", tc.iterations);
  tc.beta1 = t.value("beta1", tc.beta1);
  tc.beta2 = t.value("beta2", tc.beta2);
  tc.adam_eps = t.value("adam_eps", tc.adam_eps);
  tc.seed = t.value("seed", tc.seed);
  tc.log_every = t.value("log_every", tc.log_every);
  tc.weights.lambda_att = t.value("lambda_att", tc.weights.lambda_att);
  tc.weights.lambda_tv = t.value("lambda_tv", tc.weights.lambda_tv);
  tc.weights.lambda_l2 = t.value("lambda_l2", tc.weights.lambda_l2);
  tc.tv_mode = t.value("tv_mode", std::string("absolute")) == "squared" ? TvMode::kSquared : TvMode::kAbsolute;
  tc.init.mapper_hidden = t.value("mapper_hidden", tc.init.mapper_hidden);
  tc.init.per_layer_mapper = t.value("per_layer_mapper", tc.init.per_layer_mapper);
  tc.init.attention_channels = t.value("attention_channels", tc.init.attention_channels);
  tc.init.attention_bias = t.value("attention_bias", tc.init.attention_bias);
  c.frozen_mask = t.value("frozen_mask", std::string("per_sample")) == "canonical" ? FrozenMaskMode::kCanonical
                                                                                  : FrozenMaskMode::kPerSample;

  const auto e = j.value("edit", nlohmann::json::object());
  EditConfig& ec = tc.edit;
  ec.blend_layer = e.value("blend_layer", gc.num_layers);
  ec.alpha = e.value("alpha", ec.alpha);
  ec.tau = e.value("tau", ec.tau);
  ec.mask_mode = e.value("mask_mode", std::string("hard")) == "soft" ? MaskMode::kSoft : MaskMode::kHard;
  ec.mute_attention = e.value("mute_attention", false);
  ec.attention_resize =
      e.value("attention_resize", std::string("bilinear")) == "nearest" ? ad::ResizeMode::kNearest : ad::ResizeMode::kBilinear;
  const nlohmann::json scope = e.value("scope", nlohmann::json("all"));
  if (scope.is_string()) {
    ec.scope = EditScope::first(ec.blend_layer);
  } else if (scope.is_number()) {
    ec.scope = EditScope::first(scope.get<std::size_t>());
  } else {
    ec.scope = EditScope(scope.get<std::vector<std::size_t>>());
  }
  ec.validate(gc.num_layers);
  tc.validate(gc.num_layers);

  const auto m = j.value("embedder", nlohmann::json::object({{"type", "region_stat"}}));
  EmbedderSpec& es = c.embedder;
  es.type = m.value("type", es.type);
  es.dim = m.value("dim", es.dim);
  es.resolution = m.value("resolution", gc.output_resolution());
  es.seed = m.value("seed", es.seed);
  if (m.contains("region")) {
    const auto r = m["region"].get<std::vector<std::size_t>>();
    es.region = Region{r[0], r[1], r[2], r[3]};
  } else {
    es.region = Region{0, 0, es.resolution / 2, es.resolution / 2};
  }
  es.shared_weight = m.value("shared_weight", es.shared_weight);
  es.pool_grid = m.value("pool_grid", es.pool_grid);
  es.vocabulary_file = m.value("vocabulary_file", es.vocabulary_file);
  if (m.contains("color_tokens")) {
    es.color_tokens.clear();
    for (auto it = m["color_tokens"].begin(); it != m["color_tokens"].end(); ++it) {
      const auto v = it.value().get<std::vector<double>>();
      es.color_tokens.push_back({it.key(), {v[0], v[1], v[2]}});
    }
  }
  make_embedder(es);  // constructor validation

  const auto ev = j.value("eval", nlohmann::json::object());
  c.eval.num_samples = ev.value("num_samples", c.eval.num_samples);
  c.eval.seed = ev.value("seed", c.eval.seed);
  c.eval.embedder_dim = ev.value("embedder_dim", c.eval.embedder_dim);
  c.eval.embedder_seed = ev.value("embedder_seed", c.eval.embedder_seed);

  const auto gcj = j.value("gradcheck", nlohmann::json::object());
  c.gradcheck.epsilon = gcj.value("epsilon", c.gradcheck.epsilon);
  c.gradcheck.num_coords = gcj.value("num_coords", c.gradcheck.num_coords);
  c.gradcheck.tolerance = gcj.value("tolerance", c.gradcheck.tolerance);
  c.gradcheck.seed = gcj.value("seed", c.gradcheck.seed);
  c.gradcheck.warm_scale = gcj.value("warm_scale", c.gradcheck.warm_scale);
  c.gradcheck.denominator_floor = gcj.value("denominator_floor", c.gradcheck.denominator_floor);
  return c;
}

}  // namespace detail

/// Parses and validates a configuration document. Throws ConfigError listing
/// every schema violation with its JSON path, or naming the first semantic
/// violation (such as a blend layer beyond num_layers).
inline RunConfig parse_run_config(const nlohmann::json& j) {
  try {
    return detail::parse_run_config_unchecked(j);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

/// Canonical, fully explicit JSON form; parse_run_config(to_json(c)) == c.
inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j;
  j["format_version"] = c.format_version;
  j["output_dir"] = c.output_dir;
  j["prompt"] = c.prompt;
  if (!c.prompt2.empty()) j["prompt2"] = c.prompt2;
  const GeneratorConfig& g = c.generator;
  j["generator"] = {{"z_dim", g.z_dim},
                    {"w_dim", g.w_dim},
                    {"num_layers", g.num_layers},
                    {"base_resolution", g.base_resolution},
                    {"channels", g.channel_schedule()},
                    {"mapping_layers", g.mapping_layers},
                    {"noise_enabled", g.noise_enabled},
                    {"style_gain", g.style_gain},
                    {"seed", g.seed}};
  const TrainConfig& t = c.train;
  j["train"] = {{"learning_rate", t.learning_rate},
                {"batch_size", t.batch_size},
                {"iterations", t.iterations},
                {"beta1", t.beta1},
                {"beta2", t.beta2},
                {"adam_eps", t.adam_eps},
                {"seed", t.seed},
                {"log_every", t.log_every},
                {"lambda_att", t.weights.lambda_att},
                {"lambda_tv", t.weights.lambda_tv},
                {"lambda_l2", t.weights.lambda_l2},
                {"tv_mode", t.tv_mode == TvMode::kSquared ? "squared" : "absolute"},
                {"mapper_hidden", t.init.mapper_hidden},
                {"per_layer_mapper", t.init.per_layer_mapper},
                {"attention_channels", t.init.attention_channels},
                {"attention_bias", t.init.attention_bias},
                {"frozen_mask", c.frozen_mask == FrozenMaskMode::kCanonical ? "canonical" : "per_sample"}};
  const EditConfig& e = t.edit;
  j["edit"] = {{"blend_layer", e.blend_layer},
               {"alpha", e.alpha},
               {"tau", e.tau},
               {"scope", e.scope.layers()},
               {"mask_mode", to_string(e.mask_mode)},
               {"mute_attention", e.mute_attention},
               {"attention_resize", e.attention_resize == ad::ResizeMode::kNearest ? "nearest" : "bilinear"}};
  const EmbedderSpec& m = c.embedder;
  nlohmann::json emb = {{"type", m.type}, {"dim", m.dim}, {"resolution", m.resolution}, {"seed", m.seed}};
  if (m.type == "projection") {
    emb["pool_grid"] = m.pool_grid;
  } else {
    emb["region"] = {m.region.y0, m.region.x0, m.region.y1, m.region.x1};
    emb["shared_weight"] = m.shared_weight;
    nlohmann::json tokens = nlohmann::json::object();
    for (const auto& [name, rgb] : m.color_tokens) tokens[name] = rgb;
    emb["color_tokens"] = tokens;
    if (!m.vocabulary_file.empty()) emb["vocabulary_file"] = m.vocabulary_file;
  }
  j["embedder"] = emb;
  j["eval"] = {{"num_samples", c.eval.num_samples},
               {"seed", c.eval.seed},
               {"embedder_dim", c.eval.embedder_dim},
               {"embedder_seed", c.eval.embedder_seed}};
  j["gradcheck"] = {{"epsilon", c.gradcheck.epsilon},
                    {"num_coords", c.gradcheck.num_coords},
                    {"tolerance", c.gradcheck.tolerance},
                    {"seed", c.gradcheck.seed},
                    {"warm_scale", c.gradcheck.warm_scale},
                    {"denominator_floor", c.gradcheck.denominator_floor}};
  return j;
}

/// Reads and parses a configuration file. Malformed JSON and schema
/// violations raise ConfigError naming the file and location.
inline RunConfig load_run_config(const std::string& path) {
  std::string text;
  try {
    text = io::read_file(path);
  } catch (const FormatError& e) {
    throw ConfigError(std::string(e.what()));
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": malformed JSON at byte " + std::to_string(e.byte) + ": " + e.what());
  }
  try {
    return parse_run_config(j);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  } catch (const Error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

}  // namespace feat
