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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "feat/autodiff.hpp"
#include "feat/generator.hpp"
#include "feat/ops.hpp"
#include "feat/params.hpp"
#include "feat/rng.hpp"
#include "feat/tensor.hpp"

namespace feat {

/// Layers whose style codes the mapper edits (1-based).
class EditScope {
 public:
  EditScope() = default;
  explicit EditScope(std::vector<std::size_t> layers) : layers_(std::move(layers)) {
    std::sort(layers_.begin(), layers_.end());
    layers_.erase(std::unique(layers_.begin(), layers_.end()), layers_.end());
  }

  /// Layers 1..n.
  static EditScope first(std::size_t n) {
    std::vector<std::size_t> l(n);
    for (std::size_t k = 0; k < n; ++k) l[k] = k + 1;
    return EditScope(std::move(l));
  }

  const std::vector<std::size_t>& layers() const { return layers_; }
  bool empty() const { return layers_.empty(); }
  bool contains(std::size_t layer) const {
    return std::binary_search(layers_.begin(), layers_.end(), layer);
  }
  std::size_t max_layer() const { return layers_.empty() ? 0 : layers_.back(); }

  /// Non-empty, inside [1, num_layers], and not above the blend layer.
  void validate(std::size_t num_layers, std::size_t blend_layer) const {
    if (layers_.empty()) throw RangeError("edit scope is empty");
    if (layers_.front() < 1 || layers_.back() > num_layers) {
      throw RangeError("edit scope layer outside [1, " + std::to_string(num_layers) + "]");
    }
    if (layers_.back() > blend_layer) {
      throw RangeError("edit scope layer " + std::to_string(layers_.back()) +
                       " lies above blend layer " + std::to_string(blend_layer));
    }
  }

  friend bool operator==(const EditScope&, const EditScope&) = default;

 private:
  std::vector<std::size_t> layers_;
};

/// One residual MLP: w_dim -> hidden -> hidden -> w_dim, leaky ReLU (0.2)
/// between layers and none on the output.
struct MlpParams {
  std::vector<Tensor> weights;  // (out, in)
  std::vector<Tensor> biases;   // (out)
};

/// Weights of the latent mapper h. A single MLP is shared by every edited
/// row unless per_layer is set, in which case nets[l-1] serves layer l.
struct MapperParams {
  std::vector<MlpParams> nets;
  bool per_layer = false;

  std::size_t hidden() const { return nets.empty() ? 0 : nets[0].weights[0].dim(0); }
  std::size_t w_dim() const { return nets.empty() ? 0 : nets[0].weights[0].dim(1); }

  std::vector<const Tensor*> tensors() const {
    std::vector<const Tensor*> out;
    for (const MlpParams& n : nets) {
      for (std::size_t k = 0; k < n.weights.size(); ++k) {
        out.push_back(&n.weights[k]);
        out.push_back(&n.biases[k]);
      }
    }
    return out;
  }
  std::vector<Tensor*> tensors() {
    std::vector<Tensor*> out;
    for (const Tensor* t : std::as_const(*this).tensors()) out.push_back(const_cast<Tensor*>(t));
    return out;
  }

  void validate() const {
    if (nets.empty()) throw ConfigError("mapper: no networks");
    for (const MlpParams& n : nets) {
      if (n.weights.size() != 3 || n.biases.size() != 3) {
        throw ConfigError("mapper: each network must have exactly 3 layers");
      }
      for (std::size_t k = 0; k < 3; ++k) {
        if (n.weights[k].rank() != 2 || n.biases[k].shape() != Shape{n.weights[k].dim(0)}) {
          throw ConfigError("mapper: malformed layer " + std::to_string(k));
        }
        if (k > 0 && n.weights[k].dim(1) != n.weights[k - 1].dim(0)) {
          throw ConfigError("mapper: layer widths do not chain");
        }
        if (!n.weights[k].all_finite() || !n.biases[k].all_finite()) {
          throw NumericError("mapper: non-finite weights");
        }
      }
      if (n.weights[2].dim(0) != n.weights[0].dim(1)) {
        throw ConfigError("mapper: output width must equal input width");
      }
    }
  }
};

struct MapperInit {
  std::size_t w_dim = 64;
  std::size_t hidden = 512;
  bool per_layer = false;
  std::size_t num_layers = 8;  // networks to create when per_layer
  std::uint64_t seed = 1;
};

/// Seeded N(0, 1) / sqrt(fan_in) hidden layers; the output layer and all
/// biases start at zero, so a fresh mapper is the identity edit.
inline MapperParams init_mapper(const MapperInit& init) {
  MapperParams p;
  p.per_layer = init.per_layer;
  Rng rng(mix_seed(init.seed, 0x6d6170));
  const std::size_t count = init.per_layer ? init.num_layers : 1;
  for (std::size_t n = 0; n < count; ++n) {
    MlpParams mlp;
    const std::size_t dims[4] = {init.w_dim, init.hidden, init.hidden, init.w_dim};
    for (std::size_t k = 0; k < 3; ++k) {
      if (k < 2) {
        mlp.weights.push_back(Tensor::randn(Shape{dims[k + 1], dims[k]}, rng,
                                            1.0 / std::sqrt(static_cast<double>(dims[k]))));
      } else {
        mlp.weights.emplace_back(Shape{dims[k + 1], dims[k]}, 0.0);
      }
      mlp.biases.emplace_back(Shape{dims[k + 1]}, 0.0);
    }
    p.nets.push_back(std::move(mlp));
  }
  return p;
}

namespace detail {

inline ad::Var run_mlp(ad::Var x, const Bound& params, std::size_t net) {
  const std::size_t base = net * 6;
  ad::Var h = x;
  for (std::size_t k = 0; k < 3; ++k) {
    const ad::Var bias = params.vars[base + 2 * k + 1];
    h = ad::linear(h, params.vars[base + 2 * k], &bias);
    if (k < 2) h = ad::leaky_relu(h, 0.2);
  }
  return h;
}

}  // namespace detail

/// Offsets h(w_j) for every row j in scope, stacked (|scope|, w_dim).
inline ad::Var mapper_offsets(ad::Var wplus, const Bound& params, bool per_layer,
                              const EditScope& scope) {
  std::vector<std::size_t> rows;
  for (std::size_t l : scope.layers()) rows.push_back(l - 1);
  if (!per_layer) return detail::run_mlp(ad::gather_rows(wplus, rows), params, 0);
  std::vector<ad::Var> parts;
  for (std::size_t r : rows) {
    if (r * 6 >= params.vars.size()) throw RangeError("mapper: no network for layer " + std::to_string(r + 1));
    parts.push_back(detail::run_mlp(ad::gather_rows(wplus, {r}), params, r));
  }
  // Stack (1, d) pieces into (k, d) via concatenation on a (k, d, 1) view.
  std::vector<ad::Var> views;
  for (const ad::Var& p : parts) views.push_back(ad::reshape(p, Shape{1, p.shape()[1], 1}));
  const ad::Var stacked = ad::concat_channels(views);
  return ad::reshape(stacked, Shape{rows.size(), stacked.shape()[1]});
}

/// w_edited = w + alpha * h(w) on rows in scope; other rows copied verbatim.
inline ad::Var apply_mapper(ad::Var wplus, const Bound& params, bool per_layer, double alpha,
                            const EditScope& scope) {
  if (!std::isfinite(alpha)) throw ArgumentError("apply_mapper: alpha must be finite");
  if (wplus.value().rank() != 2) throw ConfigError("apply_mapper: W+ must be (L, w_dim)");
  scope.validate(wplus.value().dim(0), wplus.value().dim(0));
  std::vector<std::size_t> rows;
  for (std::size_t l : scope.layers()) rows.push_back(l - 1);
  const ad::Var offsets = ad::scale(mapper_offsets(wplus, params, per_layer, scope), alpha);
  return ad::scatter_add_rows(wplus, std::move(rows), offsets);
}

/// Value-level apply_mapper.
inline LatentWPlus apply_mapper(const LatentWPlus& wplus, const MapperParams& params,
                                double alpha, const EditScope& scope) {
  if (params.w_dim() != wplus.w_dim()) {
    throw ConfigError("apply_mapper: mapper width " + std::to_string(params.w_dim()) +
                      " != w_dim " + std::to_string(wplus.w_dim()));
  }
  ad::Tape tape;
  const Bound b = bind_params(tape, params.tensors(), false);
  return LatentWPlus{apply_mapper(tape.leaf_ref(wplus.rows), b, params.per_layer, alpha, scope).value()};
}

}  // namespace feat
