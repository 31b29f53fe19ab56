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

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "feat/autodiff.hpp"
#include "feat/generator.hpp"
#include "feat/ops.hpp"
#include "feat/params.hpp"
#include "feat/tensor.hpp"

namespace feat {

/// Single-channel map (1, H, W) of per-pixel edit probabilities.
struct AttentionMask {
  Tensor values;

  std::size_t height() const { return values.dim(1); }
  std::size_t width() const { return values.dim(2); }

  static AttentionMask constant(std::size_t h, std::size_t w, double v) {
    return AttentionMask{Tensor(Shape{1, h, w}, v)};
  }
};

/// Weights of the attention network: one 1x1 reduction per synthesis layer
/// (C_l -> reduced_channels) and a 1x1 fusion over the concatenation.
struct AttentionParams {
  std::vector<Tensor> reductions;  // reductions[l-1]: (c_red, C_l)
  Tensor fusion;                   // (1, L * c_red)
  bool use_bias = false;
  Tensor fusion_bias = Tensor(Shape{1}, 0.0);

  std::size_t reduced_channels() const { return reductions.empty() ? 0 : reductions[0].dim(0); }

  std::vector<const Tensor*> tensors() const {
    std::vector<const Tensor*> out;
    for (const Tensor& t : reductions) out.push_back(&t);
    out.push_back(&fusion);
    if (use_bias) out.push_back(&fusion_bias);
    return out;
  }
  std::vector<Tensor*> tensors() {
    std::vector<Tensor*> out;
    for (const Tensor* t : std::as_const(*this).tensors()) out.push_back(const_cast<Tensor*>(t));
    return out;
  }

  /// Reduction inputs must match the generator's channel schedule.
  void validate(const GeneratorConfig& gen) const {
    const auto ch = gen.channel_schedule();
    if (reductions.size() != ch.size()) {
      throw ConfigError("attention: " + std::to_string(reductions.size()) +
                        " reduction maps for " + std::to_string(ch.size()) + " layers");
    }
    const std::size_t c_red = reduced_channels();
    for (std::size_t l = 0; l < ch.size(); ++l) {
      if (reductions[l].shape() != Shape{c_red, ch[l]}) {
        throw ConfigError("attention: reduction " + std::to_string(l + 1) + " has shape " +
                          shape_string(reductions[l].shape()));
      }
    }
    if (fusion.shape() != Shape{1, ch.size() * c_red}) {
      throw ConfigError("attention: fusion weight has shape " + shape_string(fusion.shape()));
    }
  }
};

struct AttentionInit {
  std::size_t reduced_channels = 32;
  bool use_bias = false;
  std::uint64_t seed = 2;
};

inline AttentionParams init_attention(const GeneratorConfig& gen, const AttentionInit& init) {
  Rng rng(mix_seed(init.seed, 0x617474));
  AttentionParams p;
  p.use_bias = init.use_bias;
  for (std::size_t c : gen.channel_schedule()) {
    p.reductions.push_back(Tensor::randn(Shape{init.reduced_channels, c}, rng,
                                         1.0 / std::sqrt(static_cast<double>(c))));
  }
  const std::size_t fused = gen.num_layers * init.reduced_channels;
  p.fusion = Tensor::randn(Shape{1, fused}, rng, 1.0 / std::sqrt(static_cast<double>(fused)));
  return p;
}

/// Attention map at blend layer i from all L feature maps: per-layer 1x1
/// reduction, resize to S_i's resolution, channel concatenation, 1x1 fusion
/// to one channel, sigmoid. `params` binds AttentionParams::tensors().
inline ad::Var compute_mask(std::span<const ad::Var> features, std::size_t blend_layer,
                            const Bound& params, bool use_bias,
                            ad::ResizeMode resize_mode = ad::ResizeMode::kBilinear) {
  const std::size_t layers = features.size();
  if (blend_layer < 1 || blend_layer > layers) {
    throw RangeError("compute_mask: blend layer " + std::to_string(blend_layer) +
                     " outside [1, " + std::to_string(layers) + "]");
  }
  if (params.vars.size() != layers + 1 + (use_bias ? 1 : 0)) {
    throw ConfigError("compute_mask: parameter count does not match " +
                      std::to_string(layers) + " feature maps");
  }
  const Shape& target = features[blend_layer - 1].shape();
  std::vector<ad::Var> reduced;
  for (std::size_t l = 0; l < layers; ++l) {
    const ad::Var r = ad::conv1x1(features[l], params.vars[l]);
    reduced.push_back(ad::resize(r, target[1], target[2], resize_mode));
  }
  ad::Var logits = ad::conv1x1(ad::concat_channels(reduced), params.vars[layers]);
  if (use_bias) logits = ad::add_channel_bias(logits, params.vars[layers + 1]);
  return ad::sigmoid(logits);
}

/// Value-level compute_mask.
inline AttentionMask compute_mask(const FeatureStack& features, std::size_t blend_layer,
                                  const AttentionParams& params,
                                  ad::ResizeMode resize_mode = ad::ResizeMode::kBilinear) {
  ad::Tape tape;
  std::vector<ad::Var> vars;
  for (const Tensor& m : features.maps) vars.push_back(tape.leaf_ref(m));
  const Bound b = bind_params(tape, params.tensors(), false);
  return AttentionMask{compute_mask(vars, blend_layer, b, params.use_bias, resize_mode).value()};
}

/// 1 where m > tau (strictly), else 0.
inline AttentionMask threshold_mask(const AttentionMask& m, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) {
    throw ArgumentError("threshold_mask: tau must lie in [0, 1]");
  }
  AttentionMask out{m.values};
  for (double& v : out.values.values()) v = v > tau ? 1.0 : 0.0;
  return out;
}

}  // namespace feat
