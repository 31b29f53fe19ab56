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

// Miniature style-modulated synthesis network.
//
// Layers are numbered 1..L and come in pairs per resolution: layers 2k-1 and
// 2k run at base * 2^(k-1). The first layer of each new resolution upsamples
// its input (nearest, x2). The second layer of each pair feeds a modulated
// 1x1 toRGB whose output is added to the upsampled running image (skip
// architecture). Every layer's style code, including the toRGB attached to
// it, is row l of the W+ matrix.
//
// The synthesis state after layer l is the pair (features S_l, running RGB
// image at S_l's resolution). The RGB part already includes layer l's own
// toRGB contribution when layer l has one.

#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "feat/autodiff.hpp"
#include "feat/ops.hpp"
#include "feat/rng.hpp"
#include "feat/tensor.hpp"

namespace feat {

struct GeneratorConfig {
  std::size_t z_dim = 64;
  std::size_t w_dim = 64;
  std::size_t num_layers = 8;
  std::size_t base_resolution = 4;
  /// Output channels per layer; empty selects default_channel_schedule().
  std::vector<std::size_t> channels;
  std::size_t mapping_layers = 2;
  bool noise_enabled = false;
  /// Style affines are initialised G times larger and the last mapping layer
  /// G times smaller. The image distribution is unchanged; distances in W
  /// shrink by G relative to their effect on the image.
  double style_gain = 1.0;
  std::uint64_t seed = 0;

  /// Linear decay from 128 to 32 rounded to multiples of 16:
  /// 128, 112, 96, 80, 80, 64, 48, 32 for L = 8.
  static std::vector<std::size_t> default_channel_schedule(std::size_t num_layers) {
    std::vector<std::size_t> out(num_layers);
    for (std::size_t l = 0; l < num_layers; ++l) {
      const double t = num_layers > 1 ? static_cast<double>(l) / static_cast<double>(num_layers - 1) : 0.0;
      const double c = 128.0 - 96.0 * t;
      out[l] = std::max<std::size_t>(16, static_cast<std::size_t>(std::lround(c / 16.0)) * 16);
    }
    return out;
  }

  std::vector<std::size_t> channel_schedule() const {
    return channels.empty() ? default_channel_schedule(num_layers) : channels;
  }

  void validate() const {
    if (num_layers < 2 || num_layers % 2 != 0) {
      throw ConfigError("generator: num_layers must be an even integer >= 2");
    }
    if (z_dim == 0 || w_dim == 0 || base_resolution == 0 || mapping_layers == 0) {
      throw ConfigError("generator: dimensions must be positive");
    }
    if (!(style_gain > 0.0) || !std::isfinite(style_gain)) {
      throw ConfigError("generator: style_gain must be positive and finite");
    }
    const auto sched = channel_schedule();
    if (sched.size() != num_layers) {
      throw ConfigError("generator: channel schedule length " + std::to_string(sched.size()) +
                        " != num_layers " + std::to_string(num_layers));
    }
    for (std::size_t c : sched) {
      if (c == 0) throw ConfigError("generator: channel counts must be positive");
    }
  }

  /// Spatial size of layer l (1-based).
  std::size_t resolution(std::size_t layer) const {
    return base_resolution << ((layer - 1) / 2);
  }
  std::size_t output_resolution() const { return resolution(num_layers); }

  /// (C, r, r) of layer l's feature map.
  Shape feature_shape(std::size_t layer) const {
    const std::size_t r = resolution(layer);
    return Shape{channel_schedule()[layer - 1], r, r};
  }
};

/// A point of the input latent space Z.
struct LatentZ {
  std::vector<double> values;
};

/// Per-layer style codes: an (L, w_dim) matrix whose row l-1 drives layer l.
struct LatentWPlus {
  Tensor rows;

  std::size_t num_layers() const { return rows.dim(0); }
  std::size_t w_dim() const { return rows.dim(1); }
  std::vector<double> row(std::size_t layer) const {
    const std::size_t d = w_dim();
    return std::vector<double>(rows.data() + (layer - 1) * d, rows.data() + layer * d);
  }
};

/// RGB image (3, R, R); unclamped synthesis output.
struct ImageTensor {
  Tensor pixels;
};

/// S_1 .. S_L from one synthesis pass.
struct FeatureStack {
  std::vector<Tensor> maps;
};

/// L identical rows, each equal to w.
inline LatentWPlus broadcast(std::span<const double> w, std::size_t num_layers) {
  Tensor rows(Shape{num_layers, w.size()});
  for (std::size_t l = 0; l < num_layers; ++l) {
    std::copy(w.begin(), w.end(), rows.data() + l * w.size());
  }
  return LatentWPlus{std::move(rows)};
}

struct SynthesisLayerWeights {
  Tensor conv;            // (C_out, C_in, 3, 3)
  Tensor affine;          // (C_in, w_dim)
  Tensor affine_bias;     // (C_in), initialised to 1
  Tensor bias;            // (C_out)
  Tensor noise;           // (1, r, r) fixed noise image
  Tensor noise_strength;  // (1)
  // toRGB, present on even layers only.
  Tensor rgb;              // (3, C_out, 1, 1)
  Tensor rgb_affine;       // (C_out, w_dim)
  Tensor rgb_affine_bias;  // (C_out), initialised to 1
  Tensor rgb_bias;         // (3)
};

struct GeneratorWeights {
  std::vector<Tensor> mapping;  // mapping[k]: (w_dim, in_k), bias-free
  Tensor const_input;           // (C_1, base, base)
  std::vector<SynthesisLayerWeights> layers;

  /// Every tensor in a fixed order (serialisation and fingerprinting).
  std::vector<const Tensor*> tensors() const {
    std::vector<const Tensor*> out;
    for (const Tensor& t : mapping) out.push_back(&t);
    out.push_back(&const_input);
    for (const auto& l : layers) {
      for (const Tensor* t : {&l.conv, &l.affine, &l.affine_bias, &l.bias, &l.noise,
                              &l.noise_strength, &l.rgb, &l.rgb_affine, &l.rgb_affine_bias,
                              &l.rgb_bias}) {
        out.push_back(t);
      }
    }
    return out;
  }
  std::vector<Tensor*> tensors() {
    std::vector<Tensor*> out;
    for (const Tensor* t : std::as_const(*this).tensors()) out.push_back(const_cast<Tensor*>(t));
    return out;
  }
};

/// Seeded initialisation: N(0, 1) / sqrt(fan_in) for every weight matrix
/// (style affines scaled by style_gain, the last mapping layer by its inverse),
/// N(0, 1) for the constant input and noise images, 1 for affine biases and
/// 0 for additive biases and noise strengths.
inline GeneratorWeights init_generator_weights(const GeneratorConfig& cfg) {
  cfg.validate();
  Rng rng(mix_seed(cfg.seed, 0x67656e));
  const auto ch = cfg.channel_schedule();
  GeneratorWeights gw;
  for (std::size_t k = 0; k < cfg.mapping_layers; ++k) {
    const std::size_t in = k == 0 ? cfg.z_dim : cfg.w_dim;
    const double gain = k + 1 == cfg.mapping_layers ? 1.0 / cfg.style_gain : 1.0;
    gw.mapping.push_back(Tensor::randn(Shape{cfg.w_dim, in}, rng, gain / std::sqrt(double(in))));
  }
  gw.const_input = Tensor::randn(Shape{ch[0], cfg.base_resolution, cfg.base_resolution}, rng);
  for (std::size_t l = 1; l <= cfg.num_layers; ++l) {
    const std::size_t c_in = l == 1 ? ch[0] : ch[l - 2];
    const std::size_t c_out = ch[l - 1];
    const std::size_t r = cfg.resolution(l);
    SynthesisLayerWeights lw;
    lw.conv = Tensor::randn(Shape{c_out, c_in, 3, 3}, rng, 1.0 / std::sqrt(double(c_in * 9)));
    lw.affine = Tensor::randn(Shape{c_in, cfg.w_dim}, rng, cfg.style_gain / std::sqrt(double(cfg.w_dim)));
    lw.affine_bias = Tensor(Shape{c_in}, 1.0);
    lw.bias = Tensor(Shape{c_out}, 0.0);
    lw.noise = Tensor::randn(Shape{1, r, r}, rng);
    lw.noise_strength = Tensor(Shape{1}, 0.0);
    if (l % 2 == 0) {
      lw.rgb = Tensor::randn(Shape{3, c_out, 1, 1}, rng, 1.0 / std::sqrt(double(c_out)));
      lw.rgb_affine = Tensor::randn(Shape{c_out, cfg.w_dim}, rng, cfg.style_gain / std::sqrt(double(cfg.w_dim)));
      lw.rgb_affine_bias = Tensor(Shape{c_out}, 1.0);
      lw.rgb_bias = Tensor(Shape{3}, 0.0);
    } else {
      lw.rgb = Tensor(Shape{0});
      lw.rgb_affine = Tensor(Shape{0});
      lw.rgb_affine_bias = Tensor(Shape{0});
      lw.rgb_bias = Tensor(Shape{0});
    }
    gw.layers.push_back(std::move(lw));
  }
  return gw;
}

/// Synthesis state after some layer: features and the running RGB image.
struct LayerState {
  ad::Var features;
  ad::Var rgb;
};

/// Replacement for layer `layer`'s state before layers > layer run. When
/// `rgb` is absent the running image of the same call is kept.
struct FeatureOverride {
  std::size_t layer = 0;
  Tensor features;
  std::optional<Tensor> rgb;
};

/// Tape-level outputs of one synthesis call.
struct SynthesisPass {
  ad::Var image;
  std::vector<ad::Var> features;    // S_1..S_L
  std::vector<LayerState> states;   // state after each layer
};

class Generator {
 public:
  explicit Generator(GeneratorConfig cfg)
      : cfg_(std::move(cfg)), weights_(init_generator_weights(cfg_)) {}

  Generator(GeneratorConfig cfg, GeneratorWeights weights)
      : cfg_(std::move(cfg)), weights_(std::move(weights)) {
    cfg_.validate();
    check_weights();
  }

  const GeneratorConfig& config() const { return cfg_; }
  const GeneratorWeights& weights() const { return weights_; }
  std::size_t num_layers() const { return cfg_.num_layers; }

  /// Hash of the configuration and all weights; edit models record it.
  std::uint64_t fingerprint() const {
    std::vector<double> header{double(cfg_.z_dim), double(cfg_.w_dim), double(cfg_.num_layers),
                               double(cfg_.base_resolution), double(cfg_.mapping_layers),
                               cfg_.noise_enabled ? 1.0 : 0.0};
    for (std::size_t c : cfg_.channel_schedule()) header.push_back(double(c));
    std::uint64_t h = fnv1a(header);
    for (const Tensor* t : weights_.tensors()) h = fnv1a(t->values(), h);
    return h;
  }

  // -- mapping network ------------------------------------------------------

  /// z -> w through mapping_layers bias-free linear layers, each followed by
  /// a leaky ReLU (slope 0.2).
  ad::Var map_latent(ad::Var z) const {
    if (z.shape() != Shape{cfg_.z_dim}) {
      throw ConfigError("map_latent: z has shape " + shape_string(z.shape()) +
                        ", expected (" + std::to_string(cfg_.z_dim) + ")");
    }
    ad::Tape& tape = *z.tape;
    ad::Var h = z;
    for (const Tensor& w : weights_.mapping) {
      h = ad::leaky_relu(ad::linear(h, tape.leaf_ref(w)), 0.2);
    }
    return h;
  }

  std::vector<double> map_latent(const LatentZ& z) const {
    check_finite(z.values, "map_latent");
    ad::Tape tape;
    return tape.value(map_latent(tape.constant(Tensor(Shape{z.values.size()}, z.values)))).storage();
  }

  // -- synthesis ------------------------------------------------------------

  /// Initial state before layer 1: the constant input and an empty image.
  LayerState initial_state(ad::Tape& tape) const {
    return LayerState{tape.leaf_ref(weights_.const_input),
                      tape.constant(Tensor(Shape{3, cfg_.base_resolution, cfg_.base_resolution}))};
  }

  /// Runs layers first..last (1-based, inclusive) starting from `state`, with
  /// rows of `wplus` modulating each layer. Appends S_l and states to `pass`.
  LayerState run_layers(ad::Var wplus, std::size_t first, std::size_t last, LayerState state,
                        SynthesisPass* pass = nullptr) const {
    check_wplus_shape(wplus.shape());
    ad::Tape& tape = *wplus.tape;
    for (std::size_t l = first; l <= last; ++l) {
      const SynthesisLayerWeights& lw = weights_.layers[l - 1];
      ad::Var x = state.features;
      ad::Var rgb = state.rgb;
      if (l % 2 == 1 && l > 1) {
        x = ad::upsample_nearest2x(x);
        rgb = ad::upsample_nearest2x(rgb);
      }
      const ad::Var w = ad::select_row(wplus, l - 1);
      const ad::Var affine_bias = tape.leaf_ref(lw.affine_bias);
      const ad::Var style = ad::linear(w, tape.leaf_ref(lw.affine), &affine_bias);
      x = ad::modulated_conv(x, tape.leaf_ref(lw.conv), style, /*demodulate=*/true);
      if (cfg_.noise_enabled) {
        x = ad::add_scaled_noise(x, tape.leaf_ref(lw.noise), tape.leaf_ref(lw.noise_strength));
      }
      x = ad::leaky_relu(ad::add_channel_bias(x, tape.leaf_ref(lw.bias)), 0.2);
      if (l % 2 == 0) {
        const ad::Var rgb_affine_bias = tape.leaf_ref(lw.rgb_affine_bias);
        const ad::Var rgb_style = ad::linear(w, tape.leaf_ref(lw.rgb_affine), &rgb_affine_bias);
        ad::Var y = ad::modulated_conv(x, tape.leaf_ref(lw.rgb), rgb_style, /*demodulate=*/false);
        y = ad::add_channel_bias(y, tape.leaf_ref(lw.rgb_bias));
        rgb = ad::add(rgb, y);
      }
      state = LayerState{x, rgb};
      if (pass) {
        pass->features.push_back(x);
        pass->states.push_back(state);
      }
    }
    return state;
  }

  /// Full synthesis. With an override at layer i, layer i's state is replaced
  /// before layers > i run; the returned stack holds the replacement at slot
  /// i and the recomputed downstream maps.
  SynthesisPass synthesize(ad::Var wplus, const std::optional<FeatureOverride>& override = {}) const {
    check_wplus_shape(wplus.shape());
    ad::Tape& tape = *wplus.tape;
    SynthesisPass pass;
    if (!override) {
      const LayerState last = run_layers(wplus, 1, cfg_.num_layers, initial_state(tape), &pass);
      pass.image = last.rgb;
      return pass;
    }
    const std::size_t i = override->layer;
    check_layer(i);
    if (override->features.shape() != cfg_.feature_shape(i)) {
      throw InjectionError("synthesize: override at layer " + std::to_string(i) + " has shape " +
                           shape_string(override->features.shape()) + ", expected " +
                           shape_string(cfg_.feature_shape(i)));
    }
    LayerState state = run_layers(wplus, 1, i, initial_state(tape), &pass);
    state.features = tape.constant(override->features);
    if (override->rgb) {
      const std::size_t r = cfg_.resolution(i);
      if (override->rgb->shape() != Shape{3, r, r}) {
        throw InjectionError("synthesize: override RGB state has shape " +
                             shape_string(override->rgb->shape()));
      }
      state.rgb = tape.constant(*override->rgb);
    }
    pass.features[i - 1] = state.features;
    pass.states[i - 1] = state;
    return continue_from(wplus, i, state, std::move(pass));
  }

  /// Runs layers > i from `state` and finishes the image.
  SynthesisPass continue_from(ad::Var wplus, std::size_t i, LayerState state,
                              SynthesisPass pass = {}) const {
    check_layer(i);
    const LayerState last =
        i < cfg_.num_layers ? run_layers(wplus, i + 1, cfg_.num_layers, state, &pass) : state;
    pass.image = last.rgb;
    return pass;
  }

  /// Value-level synthesis.
  std::pair<ImageTensor, FeatureStack> synthesize(
      const LatentWPlus& wplus, const std::optional<FeatureOverride>& override = {}) const {
    check_finite(wplus.rows.storage(), "synthesize");
    ad::Tape tape;
    const SynthesisPass pass = synthesize(tape.leaf_ref(wplus.rows), override);
    FeatureStack stack;
    for (const ad::Var& f : pass.features) stack.maps.push_back(f.value());
    return {ImageTensor{pass.image.value()}, std::move(stack)};
  }

  void check_layer(std::size_t layer) const {
    if (layer < 1 || layer > cfg_.num_layers) {
      throw RangeError("layer index " + std::to_string(layer) + " outside [1, " +
                       std::to_string(cfg_.num_layers) + "]");
    }
  }

  void check_wplus_shape(const Shape& s) const {
    if (s != Shape{cfg_.num_layers, cfg_.w_dim}) {
      throw ConfigError("W+ code has shape " + shape_string(s) + ", expected " +
                        shape_string(Shape{cfg_.num_layers, cfg_.w_dim}));
    }
  }

 private:
  static void check_finite(std::span<const double> v, const char* what) {
    for (double x : v) {
      if (!std::isfinite(x)) throw NumericError(std::string(what) + ": non-finite input");
    }
  }

  void check_weights() const {
    const GeneratorWeights fresh = init_generator_weights(cfg_);
    const auto expected = fresh.tensors();
    const auto actual = weights_.tensors();
    if (expected.size() != actual.size()) throw ConfigError("generator weights: tensor count mismatch");
    for (std::size_t k = 0; k < expected.size(); ++k) {
      if (expected[k]->shape() != actual[k]->shape()) {
        throw ConfigError("generator weights: tensor " + std::to_string(k) + " has shape " +
                          shape_string(actual[k]->shape()) + ", expected " +
                          shape_string(expected[k]->shape()));
      }
    }
  }

  GeneratorConfig cfg_;
  GeneratorWeights weights_;
};

}  // namespace feat
