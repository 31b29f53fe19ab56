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
#include <vector>

#include "feat/tensor.hpp"

namespace feat {

struct AdamOptions {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction over a fixed list of parameter tensors.
class Adam {
 public:
  Adam(std::vector<Tensor*> params, AdamOptions opts) : params_(std::move(params)), opts_(opts) {
    for (const Tensor* p : params_) {
      m_.emplace_back(p->shape(), 0.0);
      v_.emplace_back(p->shape(), 0.0);
    }
  }

  /// grads[k] must have params[k]'s shape.
  void step(const std::vector<Tensor>& grads) {
    if (grads.size() != params_.size()) throw ArgumentError("Adam::step: gradient count mismatch");
    ++t_;
    const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Tensor& p = *params_[k];
      const Tensor& g = grads[k];
      if (g.shape() != p.shape()) throw ShapeError("Adam::step: gradient shape mismatch");
      Tensor& m = m_[k];
      Tensor& v = v_[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = opts_.beta1 * m[i] + (1.0 - opts_.beta1) * g[i];
        v[i] = opts_.beta2 * v[i] + (1.0 - opts_.beta2) * g[i] * g[i];
        p[i] -= opts_.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + opts_.eps);
      }
    }
  }

  long steps() const { return t_; }

 private:
  std::vector<Tensor*> params_;
  AdamOptions opts_;
  std::vector<Tensor> m_, v_;
  long t_ = 0;
};

}  // namespace feat
