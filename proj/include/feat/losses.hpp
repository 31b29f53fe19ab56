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

// Training objective: semantic (embedding cosine distance), attention-area,
// attention total-variation and latent-offset terms, and their weighted sum.

#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "feat/attention.hpp"
#include "feat/autodiff.hpp"
#include "feat/embedders.hpp"
#include "feat/generator.hpp"
#include "feat/ops.hpp"

namespace feat {

struct LossWeights {
  double lambda_att = 0.005;
  double lambda_tv = 0.00001;
  double lambda_l2 = 0.8;

  void validate() const {
    for (double v : {lambda_att, lambda_tv, lambda_l2}) {
      if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("loss weights must be finite and >= 0");
    }
  }
};

struct LossParts {
  double clip = 0.0;
  double att = 0.0;
  double tv = 0.0;
  double l2 = 0.0;
};

struct LossReport {
  double clip = 0.0;
  double att = 0.0;
  double tv = 0.0;
  double l2 = 0.0;
  double total = 0.0;

  friend bool operator==(const LossReport&, const LossReport&) = default;
};

enum class TvMode { kAbsolute, kSquared };

// -- tape-level terms ---------------------------------------------------------

/// 1 - <embed_image(image), target>, with `target` a unit text embedding.
inline ad::Var clip_loss(ad::Var image, std::span<const double> target, const JointEmbedder& embedder) {
  if (target.size() != embedder.embed_dim()) {
    throw ShapeError("clip_loss: text embedding length does not match the embedder");
  }
  ad::Tape& tape = *image.tape;
  const ad::Var e = embedder.embed_image(image);
  const ad::Var t = tape.constant(Tensor(Shape{target.size()}, std::vector<double>(target.begin(), target.end())));
  const ad::Var one = tape.constant(Tensor::scalar(1.0));
  return ad::sub(one, ad::dot(e, t));
}

/// Mean mask value.
inline ad::Var att_loss(ad::Var mask) { return ad::mean(mask); }

inline ad::Var tv_loss(ad::Var mask, TvMode mode = TvMode::kAbsolute) {
  const Shape& s = mask.shape();
  if (s.size() != 3 || s[1] < 2 || s[2] < 2) {
    throw ArgumentError("tv_loss: mask must be at least 2x2, got " + shape_string(s));
  }
  return ad::total_variation(mask, mode == TvMode::kSquared);
}

/// ||w - w_edited||_2 over the whole W+ matrix.
inline ad::Var latent_loss(ad::Var wplus, ad::Var edited) {
  if (wplus.shape() != edited.shape()) throw ShapeError("latent_loss: W+ shapes differ");
  return ad::l2_norm(ad::sub(wplus, edited));
}

inline ad::Var total_loss(ad::Var clip, ad::Var att, ad::Var tv, ad::Var l2, const LossWeights& w) {
  const ad::Var terms[] = {clip, att, tv, l2};
  const double weights[] = {1.0, w.lambda_att, w.lambda_tv, w.lambda_l2};
  return ad::weighted_sum(terms, weights);
}

// -- value-level terms --------------------------------------------------------

inline double clip_loss(const ImageTensor& image, std::string_view text, const JointEmbedder& embedder) {
  const auto target = embedder.embed_text(text);
  ad::Tape tape;
  return clip_loss(tape.leaf_ref(image.pixels), target, embedder).value().item();
}

inline double att_loss(const AttentionMask& m) {
  ad::Tape tape;
  return att_loss(tape.leaf_ref(m.values)).value().item();
}

inline double tv_loss(const AttentionMask& m, TvMode mode = TvMode::kAbsolute) {
  ad::Tape tape;
  return tv_loss(tape.leaf_ref(m.values), mode).value().item();
}

inline double latent_loss(const LatentWPlus& wplus, const LatentWPlus& edited) {
  ad::Tape tape;
  return latent_loss(tape.leaf_ref(wplus.rows), tape.leaf_ref(edited.rows)).value().item();
}

inline LossReport total_loss(const LossParts& p, const LossWeights& w) {
  for (double v : {p.clip, p.att, p.tv, p.l2}) {
    if (!std::isfinite(v)) throw NumericError("total_loss: non-finite loss term");
  }
  LossReport r{p.clip, p.att, p.tv, p.l2, 0.0};
  r.total = p.clip + w.lambda_att * p.att + w.lambda_tv * p.tv + w.lambda_l2 * p.l2;
  return r;
}

}  // namespace feat
