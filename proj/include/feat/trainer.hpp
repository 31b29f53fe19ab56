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

// Training loops for edit models. Each step draws batch_size latents
// z ~ N(0, I), maps and broadcasts them to W+, runs the soft-mask edit, and
// takes one Adam step on the batch-mean objective. Only the mapper and the
// attention network are updated; the generator is read-only.

#pragma once

#include <chrono>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "feat/attention.hpp"
#include "feat/editor.hpp"
#include "feat/embedders.hpp"
#include "feat/generator.hpp"
#include "feat/log.hpp"
#include "feat/losses.hpp"
#include "feat/mapper.hpp"
#include "feat/optim.hpp"
#include "feat/params.hpp"

namespace feat {

struct ModelInit {
  std::size_t mapper_hidden = 512;
  bool per_layer_mapper = false;
  std::size_t attention_channels = 32;
  bool attention_bias = false;
};

/// What the per-sample observer sees after each forward pass.
struct StepProbe {
  std::size_t step = 0;
  std::size_t sample = 0;
  const EditPass* pass = nullptr;
};

struct TrainConfig {
  double learning_rate = 1e-4;
  std::size_t batch_size = 2;
  std::size_t iterations = 1000;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  LossWeights weights;
  EditConfig edit;
  TvMode tv_mode = TvMode::kAbsolute;
  ModelInit init;
  std::uint64_t seed = 0;
  std::size_t log_every = 50;

  /// Test hook, invoked for every sample of every step.
  std::function<void(const StepProbe&)> observer;
  /// Called with the in-progress model every log_every steps.
  std::function<void(std::size_t step, const EditModel&)> checkpoint;

  void validate(std::size_t num_layers) const {
    if (!(learning_rate > 0.0) || batch_size == 0 || log_every == 0) {
      throw ConfigError("train: learning_rate, batch_size and log_every must be positive");
    }
    weights.validate();
    edit.validate(num_layers);
  }
};

struct HistoryEntry {
  std::size_t step = 0;
  LossReport loss;   // batch means
  double mean_mask = 0.0;

  friend bool operator==(const HistoryEntry&, const HistoryEntry&) = default;
};

struct TrainHistory {
  std::vector<HistoryEntry> entries;
  /// Wall-clock milliseconds of each logged step; excluded from equality.
  std::vector<double> wall_ms;

  friend bool operator==(const TrainHistory& a, const TrainHistory& b) {
    return a.entries == b.entries;
  }
};

/// Seed used to draw step `step`'s batch; reported when a step fails.
inline std::uint64_t batch_seed(std::uint64_t seed, std::size_t step) {
  return mix_seed(seed, 0x62617463680000ULL + step);
}

/// Batch of W+ codes for one training step.
inline std::vector<LatentWPlus> sample_wplus_batch(const Generator& gen, std::uint64_t seed,
                                                   std::size_t count) {
  Rng rng(seed);
  std::vector<LatentWPlus> out;
  for (std::size_t b = 0; b < count; ++b) {
    LatentZ z;
    z.values.resize(gen.config().z_dim);
    for (double& v : z.values) v = rng.normal();
    out.push_back(broadcast(gen.map_latent(z), gen.num_layers()));
  }
  return out;
}

/// Tape-level objective terms of a single edit.
struct ObjectiveTerms {
  ad::Var clip, att, tv, l2, total;
};

inline ObjectiveTerms edit_objective(const EditPass& pass, ad::Var wplus,
                                     std::span<const double> target, const JointEmbedder& embedder,
                                     const LossWeights& weights, TvMode tv_mode) {
  ObjectiveTerms t;
  t.clip = clip_loss(pass.edited.image, target, embedder);
  t.att = att_loss(pass.mask);
  t.tv = tv_loss(pass.mask, tv_mode);
  t.l2 = latent_loss(wplus, pass.edited_codes);
  t.total = total_loss(t.clip, t.att, t.tv, t.l2, weights);
  return t;
}

inline EditModel init_edit_model(const Generator& gen, const TrainConfig& cfg,
                                 const std::string& prompt, std::uint64_t init_seed) {
  EditModel model;
  model.mapper = init_mapper(MapperInit{gen.config().w_dim, cfg.init.mapper_hidden,
                                        cfg.init.per_layer_mapper, gen.num_layers(),
                                        mix_seed(init_seed, 1)});
  model.attention = init_attention(
      gen.config(), AttentionInit{cfg.init.attention_channels, cfg.init.attention_bias,
                                  mix_seed(init_seed, 2)});
  model.config = cfg.edit;
  model.prompt = prompt;
  model.generator_fingerprint = gen.fingerprint();
  return model;
}

namespace detail {

/// Where the training mask comes from.
struct MaskPlan {
  bool train_attention = true;
  /// Frozen attention, thresholded at tau per sample (two-step, step 2).
  bool frozen_attention = false;
  /// Single fixed mask for every sample.
  std::optional<AttentionMask> fixed;
};

inline TrainHistory train_loop(const std::string& prompt, const JointEmbedder& embedder,
                               const Generator& gen, const TrainConfig& cfg, EditModel& model,
                               const MaskPlan& plan) {
  cfg.validate(gen.num_layers());
  const std::vector<double> target = embedder.embed_text(prompt);
  EditConfig edit = cfg.edit;
  edit.mask_mode = plan.frozen_attention ? MaskMode::kHard : MaskMode::kSoft;

  std::vector<Tensor*> trainable = model.mapper.tensors();
  const bool train_attention = plan.train_attention && !plan.fixed && !edit.mute_attention;
  if (train_attention) {
    for (Tensor* t : model.attention.tensors()) trainable.push_back(t);
  }
  Adam adam(trainable, AdamOptions{cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps});

  TrainHistory history;
  const double inv_batch = 1.0 / static_cast<double>(cfg.batch_size);
  for (std::size_t step = 0; step < cfg.iterations; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::uint64_t bseed = batch_seed(cfg.seed, step);
    const auto batch = sample_wplus_batch(gen, bseed, cfg.batch_size);

    std::vector<Tensor> grads;
    for (const Tensor* t : trainable) grads.emplace_back(t->shape(), 0.0);
    LossParts mean_parts;
    double mean_mask = 0.0;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      ad::Tape tape;
      const ad::Var wplus = tape.leaf_ref(batch[b].rows);
      const Bound mapper = bind_params(tape, model.mapper.tensors(), true);
      const Bound attention = bind_params(tape, model.attention.tensors(), train_attention);
      const MaskFn mask_fn = plan.fixed ? fixed_mask_fn(*plan.fixed)
                                        : attention_mask_fn(attention, model.attention.use_bias, edit);
      const EditPass pass = run_edit(gen, wplus, mapper, model.mapper.per_layer, edit, mask_fn);
      const ObjectiveTerms terms = edit_objective(pass, wplus, target, embedder, cfg.weights, cfg.tv_mode);
      const double total = terms.total.value().item();
      if (!std::isfinite(total)) {
        throw NumericError("non-finite loss at step " + std::to_string(step) + ", sample " +
                           std::to_string(b) + " (batch seed " + std::to_string(bseed) +
                           "): clip=" + std::to_string(terms.clip.value().item()) +
                           " att=" + std::to_string(terms.att.value().item()) +
                           " tv=" + std::to_string(terms.tv.value().item()) +
                           " l2=" + std::to_string(terms.l2.value().item()));
      }
      if (cfg.observer) cfg.observer(StepProbe{step, b, &pass});
      tape.backward(terms.total, inv_batch);
      std::size_t k = 0;
      for (const ad::Var& v : mapper.vars) {
        if (tape.has_grad(v.id)) {
          const Tensor& g = tape.grad_ref(v.id);
          for (std::size_t i = 0; i < g.size(); ++i) grads[k][i] += g[i];
        }
        ++k;
      }
      if (train_attention) {
        for (const ad::Var& v : attention.vars) {
          if (tape.has_grad(v.id)) {
            const Tensor& g = tape.grad_ref(v.id);
            for (std::size_t i = 0; i < g.size(); ++i) grads[k][i] += g[i];
          }
          ++k;
        }
      }
      mean_parts.clip += terms.clip.value().item() * inv_batch;
      mean_parts.att += terms.att.value().item() * inv_batch;
      mean_parts.tv += terms.tv.value().item() * inv_batch;
      mean_parts.l2 += terms.l2.value().item() * inv_batch;
      mean_mask += pass.mask.value().mean() * inv_batch;
    }
    adam.step(grads);

    const bool last = step + 1 == cfg.iterations;
    if (step % cfg.log_every == 0 || last) {
      const double ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      history.entries.push_back(HistoryEntry{step, total_loss(mean_parts, cfg.weights), mean_mask});
      history.wall_ms.push_back(ms);
      feat::log::info("step " + std::to_string(step) + " total=" +
                std::to_string(history.entries.back().loss.total) + " clip=" +
                std::to_string(mean_parts.clip) + " mask=" + std::to_string(mean_mask) + " (" +
                std::to_string(ms) + " ms)");
      if (cfg.checkpoint && step % cfg.log_every == 0) cfg.checkpoint(step, model);
    }
  }
  return history;
}

}  // namespace detail

struct TrainResult {
  EditModel model;
  TrainHistory history;
};

/// Joint mapper + attention training for one prompt. The returned model
/// switches to hard masks for inference.
inline TrainResult train_edit_model(const std::string& prompt, const JointEmbedder& embedder,
                                    const Generator& gen, const TrainConfig& cfg) {
  cfg.validate(gen.num_layers());
  EditModel model = init_edit_model(gen, cfg, prompt, cfg.seed);
  TrainHistory history = detail::train_loop(prompt, embedder, gen, cfg, model, detail::MaskPlan{});
  model.config.mask_mode = MaskMode::kHard;
  return TrainResult{std::move(model), std::move(history)};
}

enum class FrozenMaskMode {
  /// Attention parameters are frozen and masks are recomputed per image.
  kPerSample,
  /// One mask, from a canonical latent, is used for every image.
  kCanonical,
};

/// Canonical latent used by FrozenMaskMode::kCanonical.
inline LatentWPlus canonical_wplus(const Generator& gen, std::uint64_t seed) {
  return sample_wplus_batch(gen, mix_seed(seed, 0x63616e6f6eULL), 1).front();
}

/// Thresholded attention mask of `model` for one code.
inline AttentionMask hard_mask_for(const EditModel& model, const Generator& gen, const LatentWPlus& wplus) {
  const auto [image, features] = gen.synthesize(wplus);
  return threshold_mask(compute_mask(features, model.config.blend_layer, model.attention,
                                     model.config.attention_resize),
                        model.config.tau);
}

/// Step 2 alone: trains a fresh mapper for `prompt` with the attention
/// network of `step1` frozen (or with an explicit fixed mask).
inline TrainResult train_with_frozen_attention(const std::string& prompt, const JointEmbedder& embedder,
                                               const Generator& gen, const TrainConfig& cfg,
                                               const EditModel& step1,
                                               std::optional<AttentionMask> fixed_mask = {}) {
  cfg.validate(gen.num_layers());
  EditModel model = init_edit_model(gen, cfg, prompt, mix_seed(cfg.seed, 0x7374657032ULL));
  model.attention = step1.attention;
  model.config = cfg.edit;
  model.config.mask_mode = MaskMode::kHard;
  detail::MaskPlan plan;
  plan.train_attention = false;
  plan.frozen_attention = !fixed_mask.has_value();
  plan.fixed = fixed_mask;
  TrainHistory history = detail::train_loop(prompt, embedder, gen, cfg, model, plan);
  model.frozen_mask = std::move(fixed_mask);
  return TrainResult{std::move(model), std::move(history)};
}

struct TwoStepResult {
  EditModel step1;
  EditModel step2;
  /// The frozen mask; in per-sample mode, the mask of the canonical latent.
  AttentionMask frozen;
  TrainHistory history1;
  TrainHistory history2;
};

/// Prompt 1 trains the attention; its mask is then frozen while a fresh
/// mapper learns prompt 2.
inline TwoStepResult train_two_step(const std::string& prompt1, const std::string& prompt2,
                                    const JointEmbedder& embedder, const Generator& gen,
                                    const TrainConfig& cfg,
                                    FrozenMaskMode mode = FrozenMaskMode::kPerSample) {
  TwoStepResult out;
  TrainResult s1 = train_edit_model(prompt1, embedder, gen, cfg);
  out.frozen = hard_mask_for(s1.model, gen, canonical_wplus(gen, cfg.seed));
  std::optional<AttentionMask> fixed;
  if (mode == FrozenMaskMode::kCanonical) fixed = out.frozen;
  TrainResult s2 = train_with_frozen_attention(prompt2, embedder, gen, cfg, s1.model, fixed);
  out.step1 = std::move(s1.model);
  out.history1 = std::move(s1.history);
  out.step2 = std::move(s2.model);
  out.history2 = std::move(s2.history);
  return out;
}

}  // namespace feat
