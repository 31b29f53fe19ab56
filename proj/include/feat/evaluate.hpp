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

// Population-level evaluation of an edit model: Frechet distance between
// Gaussian fits of original and edited image embeddings, and mean per-pair
// cosine similarity / Euclidean distance between them.

#pragma once

#include <string>
#include <vector>

#include "feat/editor.hpp"
#include "feat/embedders.hpp"
#include "feat/generator.hpp"
#include "feat/log.hpp"
#include "feat/metrics.hpp"
#include "feat/trainer.hpp"

namespace feat {

struct EvalReport {
  std::string attribute;
  std::size_t num_samples = 0;
  double fid = 0.0;
  double cs = 0.0;
  double ed = 0.0;
  /// max over pairs of |ED^2 - (2 - 2 CS)|; zero up to rounding for unit embeddings.
  double pair_identity_residual = 0.0;
};

/// W+ code for an integer latent seed, as used by the CLI.
inline LatentWPlus latent_from_seed(const Generator& gen, std::uint64_t seed) {
  return sample_wplus_batch(gen, mix_seed(seed, 0x6c6174656e74ULL), 1).front();
}

inline EvalReport evaluate_model(const EditModel& model, const Generator& gen, const JointEmbedder& embedder,
                                 std::size_t num_samples, std::uint64_t seed) {
  if (num_samples < 2) throw ArgumentError("evaluate: need at least 2 samples, got " + std::to_string(num_samples));
  if (num_samples < embedder.embed_dim() + 1) {
    log::warn("evaluate: " + std::to_string(num_samples) + " samples for a " +
              std::to_string(embedder.embed_dim()) + "-D embedding; covariance is rank-deficient");
  }
  std::vector<std::vector<double>> orig, edited;
  for (std::size_t k = 0; k < num_samples; ++k) {
    const EditResult r = edit_image(latent_from_seed(gen, mix_seed(seed, k)), model, gen);
    orig.push_back(embedder.embed_image(r.original));
    edited.push_back(embedder.embed_image(r.edited));
  }
  EvalReport rep;
  rep.attribute = model.prompt;
  rep.num_samples = num_samples;
  rep.fid = frechet_distance(fit_gaussian(orig), fit_gaussian(edited));
  const IdentityMetrics id = identity_metrics(orig, edited);
  rep.cs = id.cosine_similarity;
  rep.ed = id.euclidean_distance;
  for (std::size_t k = 0; k < num_samples; ++k) {
    const double cs = cosine_similarity(orig[k], edited[k]);
    const double ed = euclidean_distance(orig[k], edited[k]);
    rep.pair_identity_residual = std::max(rep.pair_identity_residual, std::abs(ed * ed - (2.0 - 2.0 * cs)));
  }
  return rep;
}

}  // namespace feat
