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

// Attention-blended editing.
//
// An edit runs the generator twice. The original pass with w yields every
// feature map (the attention network's input) and the state at blend layer
// i. The mapped pass runs layers 1..i with w_edited = w + alpha * h(w). The
// two layer-i states are blended per pixel by the mask, and layers > i then
// run from the blended state with the original rows of w.
//
// The blended state carries the running RGB image as well as S_i, so that a
// mask of all ones reproduces the mapped image exactly and a mask of all
// zeros reproduces the original exactly.

#pragma once

#include <functional>
#include <optional>
#include <string>

#include "feat/attention.hpp"
#include "feat/autodiff.hpp"
#include "feat/generator.hpp"
#include "feat/mapper.hpp"
#include "feat/ops.hpp"
#include "feat/params.hpp"

namespace feat {

enum class MaskMode { kSoft, kHard };

inline const char* to_string(MaskMode m) { return m == MaskMode::kSoft ? "soft" : "hard"; }

struct EditConfig {
  std::size_t blend_layer = 8;
  double alpha = 0.1;
  double tau = 0.8;
  EditScope scope = EditScope::first(8);
  MaskMode mask_mode = MaskMode::kHard;
  /// Ablation: bypass the attention network with m = 1 everywhere.
  bool mute_attention = false;
  ad::ResizeMode attention_resize = ad::ResizeMode::kBilinear;

  void validate(std::size_t num_layers) const {
    if (blend_layer < 1 || blend_layer > num_layers) {
      throw RangeError("blend layer " + std::to_string(blend_layer) + " outside [1, " +
                       std::to_string(num_layers) + "]");
    }
    scope.validate(num_layers, blend_layer);
    if (!(tau >= 0.0 && tau <= 1.0)) throw ArgumentError("tau must lie in [0, 1]");
    if (!std::isfinite(alpha)) throw ArgumentError("alpha must be finite");
  }
};

/// A trained edit: mapper, attention network, and how to apply them.
struct EditModel {
  MapperParams mapper;
  AttentionParams attention;
  EditConfig config;
  std::optional<AttentionMask> frozen_mask;
  std::string prompt;
  std::uint64_t generator_fingerprint = 0;
};

/// Value-level feature blend: m * mapped + (1 - m) * original per channel.
inline Tensor blend(const Tensor& original, const Tensor& mapped, const AttentionMask& m) {
  ad::Tape tape;
  return ad::blend(tape.leaf_ref(original), tape.leaf_ref(mapped), tape.leaf_ref(m.values)).value();
}

/// Produces the mask for one edit given the original pass.
using MaskFn = std::function<ad::Var(const SynthesisPass& original)>;

/// Tape-level record of one edit.
struct EditPass {
  SynthesisPass original;
  ad::Var mask;
  ad::Var edited_codes;
  LayerState mapped_state;   // layer-i state of the w_edited pass
  LayerState blended_state;  // what layers > i consume
  SynthesisPass edited;      // continuation; edited.image is the result
};

/// Runs the full edit pipeline on `tape`. `wplus` is the unedited code;
/// `mapper` binds MapperParams::tensors().
inline EditPass run_edit(const Generator& gen, ad::Var wplus, const Bound& mapper,
                         bool per_layer_mapper, const EditConfig& cfg, const MaskFn& mask_fn) {
  cfg.validate(gen.num_layers());
  const std::size_t i = cfg.blend_layer;
  ad::Tape& tape = *wplus.tape;
  EditPass out;
  out.original = gen.synthesize(wplus);
  out.mask = mask_fn(out.original);
  const std::size_t r = gen.config().resolution(i);
  if (out.mask.shape() != Shape{1, r, r}) {
    throw MaskError("edit mask has shape " + shape_string(out.mask.shape()) +
                    ", blend layer " + std::to_string(i) + " needs (1," + std::to_string(r) +
                    "," + std::to_string(r) + ")");
  }
  out.edited_codes = apply_mapper(wplus, mapper, per_layer_mapper, cfg.alpha, cfg.scope);
  out.mapped_state = gen.run_layers(out.edited_codes, 1, i, gen.initial_state(tape));
  const LayerState& orig_state = out.original.states[i - 1];
  out.blended_state = LayerState{ad::blend(orig_state.features, out.mapped_state.features, out.mask),
                                 ad::blend(orig_state.rgb, out.mapped_state.rgb, out.mask)};
  out.edited = gen.continue_from(wplus, i, out.blended_state);
  return out;
}

/// Mask function for an attention network bound on the same tape. Hard mode
/// thresholds at cfg.tau and cuts the gradient.
inline MaskFn attention_mask_fn(const Bound& attention, bool use_bias, const EditConfig& cfg) {
  return [&attention, use_bias, cfg](const SynthesisPass& original) {
    ad::Tape& tape = *original.image.tape;
    if (cfg.mute_attention) {
      const Shape& s = original.features[cfg.blend_layer - 1].shape();
      return tape.constant(Tensor(Shape{1, s[1], s[2]}, 1.0));
    }
    ad::Var soft = compute_mask(original.features, cfg.blend_layer, attention, use_bias,
                                cfg.attention_resize);
    if (cfg.mask_mode == MaskMode::kSoft) return soft;
    return tape.constant(threshold_mask(AttentionMask{soft.value()}, cfg.tau).values);
  };
}

inline MaskFn fixed_mask_fn(const AttentionMask& mask) {
  return [&mask](const SynthesisPass& original) {
    return original.image.tape->leaf_ref(mask.values);
  };
}

struct EditResult {
  ImageTensor edited;
  ImageTensor original;
  AttentionMask mask;
  LatentWPlus edited_codes;
};

/// Edits one W+ code with a trained model. Uses the model's frozen mask when
/// present, otherwise the attention network in config.mask_mode.
inline EditResult edit_image(const LatentWPlus& wplus, const EditModel& model, const Generator& gen) {
  if (model.generator_fingerprint != gen.fingerprint()) {
    throw StaleModelError("edit model was trained for generator " +
                          hex64(model.generator_fingerprint) + ", current generator is " +
                          hex64(gen.fingerprint()));
  }
  gen.check_wplus_shape(wplus.rows.shape());
  if (!wplus.rows.all_finite()) throw NumericError("edit_image: non-finite W+ code");
  ad::Tape tape;
  const Bound mapper = bind_params(tape, model.mapper.tensors(), false);
  const Bound attention = bind_params(tape, model.attention.tensors(), false);
  const MaskFn mask_fn = model.frozen_mask
                             ? fixed_mask_fn(*model.frozen_mask)
                             : attention_mask_fn(attention, model.attention.use_bias, model.config);
  const EditPass pass = run_edit(gen, tape.leaf_ref(wplus.rows), mapper, model.mapper.per_layer,
                                 model.config, mask_fn);
  return EditResult{ImageTensor{pass.edited.image.value()}, ImageTensor{pass.original.image.value()},
                    AttentionMask{pass.mask.value()}, LatentWPlus{pass.edited_codes.value()}};
}

/// Two-step manipulation: the same pipeline with a caller-supplied mask and
/// no attention network.
inline ImageTensor edit_with_frozen_mask(const LatentWPlus& wplus, const MapperParams& mapper,
                                         const AttentionMask& frozen, const EditConfig& cfg,
                                         const Generator& gen) {
  cfg.validate(gen.num_layers());
  const std::size_t r = gen.config().resolution(cfg.blend_layer);
  if (frozen.values.shape() != Shape{1, r, r}) {
    throw MaskError("frozen mask has shape " + shape_string(frozen.values.shape()) +
                    ", blend layer " + std::to_string(cfg.blend_layer) + " has resolution " +
                    std::to_string(r));
  }
  ad::Tape tape;
  const Bound m = bind_params(tape, mapper.tensors(), false);
  const EditPass pass =
      run_edit(gen, tape.leaf_ref(wplus.rows), m, mapper.per_layer, cfg, fixed_mask_fn(frozen));
  return ImageTensor{pass.edited.image.value()};
}

}  // namespace feat
