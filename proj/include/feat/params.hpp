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

#include <vector>

#include "feat/autodiff.hpp"
#include "feat/tensor.hpp"

namespace feat {

/// Tape leaves for a parameter set, in tensors() order.
struct Bound {
  std::vector<ad::Var> vars;
};

inline Bound bind_params(ad::Tape& tape, const std::vector<const Tensor*>& tensors, bool trainable) {
  Bound b;
  for (const Tensor* t : tensors) b.vars.push_back(tape.leaf_ref(*t, trainable));
  return b;
}

inline Bound bind_params(ad::Tape& tape, const std::vector<Tensor*>& tensors, bool trainable) {
  return bind_params(tape, std::vector<const Tensor*>(tensors.begin(), tensors.end()), trainable);
}

inline std::vector<Tensor> collect_grads(const ad::Tape& tape, const Bound& b) {
  std::vector<Tensor> out;
  for (const ad::Var& v : b.vars) out.push_back(tape.grad(v));
  return out;
}

}  // namespace feat
