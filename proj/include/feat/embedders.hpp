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

// Joint text/image embedders. JointEmbedder is the boundary a real
// vision-language model would be adapted behind; the two implementations
// here are small deterministic stand-ins.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "feat/autodiff.hpp"
#include "feat/generator.hpp"
#include "feat/ops.hpp"
#include "feat/rng.hpp"
#include "feat/tensor.hpp"

namespace feat {

inline std::vector<std::string> split_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream is{std::string(text)};
  for (std::string tok; is >> tok;) out.push_back(tok);
  return out;
}

inline std::vector<double> normalized(std::vector<double> v) {
  double ss = 0.0;
  for (double x : v) ss += x * x;
  const double n = std::sqrt(ss);
  if (!(n > 0.0) || !std::isfinite(n)) throw NumericError("cannot normalise a zero or non-finite vector");
  for (double& x : v) x /= n;
  return v;
}

class JointEmbedder {
 public:
  virtual ~JointEmbedder() = default;

  virtual std::size_t embed_dim() const = 0;
  virtual std::size_t input_resolution() const = 0;

  /// Unit-norm embedding of a (3, R, R) image already at input_resolution().
  virtual ad::Var embed_resized(ad::Var image) const = 0;

  /// Unit-norm embedding of a text prompt.
  virtual std::vector<double> embed_text(std::string_view text) const = 0;

  /// Differentiable image embedding; resizes bilinearly when the image is not
  /// at input_resolution().
  ad::Var embed_image(ad::Var image) const {
    const Tensor& v = image.value();
    if (v.rank() != 3 || v.dim(0) != 3) {
      throw ShapeError("embed_image: expected (3, R, R), got " + shape_string(v.shape()));
    }
    if (!v.all_finite()) throw NumericError("embed_image: non-finite pixels");
    const std::size_t r = input_resolution();
    return embed_resized(ad::resize(image, r, r, ad::ResizeMode::kBilinear));
  }

  std::vector<double> embed_image(const ImageTensor& img) const {
    ad::Tape tape;
    return embed_image(tape.leaf_ref(img.pixels)).value().storage();
  }
};

/// Half-open pixel rectangle [y0, y1) x [x0, x1).
struct Region {
  std::size_t y0 = 0, x0 = 0, y1 = 0, x1 = 0;
  friend bool operator==(const Region&, const Region&) = default;
};

/// Embeds the per-channel mean colour inside a fixed region through a seeded
/// orthonormal 3 -> D projection. Pixels outside the region never influence
/// the embedding, which makes edit locality directly measurable.
///
/// With shared_weight k > 0, image and text embeddings both gain a common
/// component k * u (u orthogonal to the colour subspace) before the final
/// normalisation, so 1 - cos shrinks by exactly 1 / (1 + k^2) for colour-only
/// targets. This mimics the narrow cosine band of real image-text models.
class RegionStatEmbedder final : public JointEmbedder {
 public:
  RegionStatEmbedder(std::size_t embed_dim, std::size_t input_resolution, Region region,
                     std::uint64_t seed, double shared_weight = 0.0)
      : dim_(embed_dim), res_(input_resolution), region_(region), shared_weight_(shared_weight) {
    if (dim_ < 3) throw ConfigError("RegionStatEmbedder: embed_dim must be >= 3");
    if (!(shared_weight_ >= 0.0) || !std::isfinite(shared_weight_)) {
      throw ConfigError("RegionStatEmbedder: shared_weight must be finite and >= 0");
    }
    if (shared_weight_ > 0.0 && dim_ < 4) {
      throw ConfigError("RegionStatEmbedder: a shared component needs embed_dim >= 4");
    }
    if (!(region.y0 < region.y1 && region.x0 < region.x1 && region.y1 <= res_ && region.x1 <= res_)) {
      throw ConfigError("RegionStatEmbedder: region is empty or exceeds the input resolution");
    }
    // Gram-Schmidt on seeded Gaussian columns: three for the projection, a
    // fourth for the shared direction.
    Rng rng(mix_seed(seed, 0x726567));
    const std::size_t cols = std::min<std::size_t>(dim_, 4);
    std::vector<std::vector<double>> basis;
    for (std::size_t c = 0; c < cols; ++c) {
      std::vector<double> col(dim_);
      for (double& v : col) v = rng.normal();
      for (const auto& b : basis) {
        double d = 0.0;
        for (std::size_t k = 0; k < dim_; ++k) d += col[k] * b[k];
        for (std::size_t k = 0; k < dim_; ++k) col[k] -= d * b[k];
      }
      basis.push_back(normalized(std::move(col)));
    }
    projection_ = Tensor(Shape{dim_, 3});
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t k = 0; k < dim_; ++k) projection_[k * 3 + c] = basis[c][k];
    }
    shared_ = Tensor(Shape{dim_}, 0.0);
    if (cols == 4) {
      for (std::size_t k = 0; k < dim_; ++k) shared_[k] = shared_weight_ * basis[3][k];
    }
  }

  std::size_t embed_dim() const override { return dim_; }
  std::size_t input_resolution() const override { return res_; }
  const Region& region() const { return region_; }
  const Tensor& projection() const { return projection_; }
  double shared_weight() const { return shared_weight_; }

  /// Adds a token whose target is an explicit vector (normalised on insert).
  void add_token(const std::string& token, std::vector<double> target) {
    if (target.size() != dim_) {
      throw ConfigError("vocabulary entry '" + token + "' has length " +
                        std::to_string(target.size()) + ", expected " + std::to_string(dim_));
    }
    vocabulary_[token] = normalized(std::move(target));
  }

  /// Adds a token whose target is the embedding of a uniform region colour.
  void add_color_token(const std::string& token, const std::array<double, 3>& rgb) {
    std::vector<double> t(dim_, 0.0);
    for (std::size_t k = 0; k < dim_; ++k) {
      for (std::size_t c = 0; c < 3; ++c) t[k] += projection_[k * 3 + c] * rgb[c];
    }
    add_token(token, std::move(t));
  }

  const std::map<std::string, std::vector<double>>& vocabulary() const { return vocabulary_; }

  ad::Var embed_resized(ad::Var image) const override {
    ad::Tape& tape = *image.tape;
    const ad::Var mean = ad::region_channel_mean(image, region_.y0, region_.x0, region_.y1, region_.x1);
    const ad::Var colour = ad::normalize(ad::linear(mean, tape.leaf_ref(projection_)));
    if (shared_weight_ == 0.0) return colour;
    return ad::normalize(ad::add(colour, tape.leaf_ref(shared_)));
  }

  /// Normalised sum of the token targets.
  std::vector<double> embed_text(std::string_view text) const override {
    const auto tokens = split_tokens(text);
    if (tokens.empty()) throw ArgumentError("embed_text: empty prompt");
    std::vector<double> acc(dim_, 0.0);
    for (const std::string& tok : tokens) {
      const auto it = vocabulary_.find(tok);
      if (it == vocabulary_.end()) throw VocabularyError("unknown token '" + tok + "'");
      for (std::size_t k = 0; k < dim_; ++k) acc[k] += it->second[k];
    }
    acc = normalized(std::move(acc));
    if (shared_weight_ == 0.0) return acc;
    for (std::size_t k = 0; k < dim_; ++k) acc[k] += shared_[k];
    return normalized(std::move(acc));
  }

 private:
  std::size_t dim_;
  std::size_t res_;
  Region region_;
  double shared_weight_;
  Tensor projection_;
  Tensor shared_;
  std::map<std::string, std::vector<double>> vocabulary_;
};

/// Dense seeded projection of the average-pooled image (pooled to a fixed
/// grid) followed by normalisation. Text maps through a seeded hash of the
/// token sequence to a Gaussian direction.
class ProjectionEmbedder final : public JointEmbedder {
 public:
  ProjectionEmbedder(std::size_t embed_dim, std::size_t input_resolution, std::uint64_t seed,
                     std::size_t pool_grid = 8)
      : dim_(embed_dim), res_(input_resolution), grid_(pool_grid), seed_(seed) {
    if (dim_ == 0 || grid_ == 0 || res_ % grid_ != 0) {
      throw ConfigError("ProjectionEmbedder: input resolution must be a multiple of the pool grid");
    }
    const std::size_t in = 3 * grid_ * grid_;
    Rng rng(mix_seed(seed, 0x70726f));
    projection_ = Tensor::randn(Shape{dim_, in}, rng, 1.0 / std::sqrt(static_cast<double>(in)));
  }

  std::size_t embed_dim() const override { return dim_; }
  std::size_t input_resolution() const override { return res_; }

  ad::Var embed_resized(ad::Var image) const override {
    ad::Tape& tape = *image.tape;
    const ad::Var pooled = ad::avg_pool(image, res_ / grid_);
    const ad::Var flat = ad::reshape(pooled, Shape{3 * grid_ * grid_});
    return ad::normalize(ad::linear(flat, tape.leaf_ref(projection_)));
  }

  std::vector<double> embed_text(std::string_view text) const override {
    const auto tokens = split_tokens(text);
    if (tokens.empty()) throw ArgumentError("embed_text: empty prompt");
    std::uint64_t h = mix_seed(seed_, 0x747874);
    for (const std::string& tok : tokens) h = mix_seed(fnv1a_bytes(tok, h));
    Rng rng(h);
    std::vector<double> v(dim_);
    for (double& x : v) x = rng.normal();
    return normalized(std::move(v));
  }

 private:
  std::size_t dim_;
  std::size_t res_;
  std::size_t grid_;
  std::uint64_t seed_;
  Tensor projection_;
};

}  // namespace feat
