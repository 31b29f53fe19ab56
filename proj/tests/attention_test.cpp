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

#include <gtest/gtest.h>

#include "feat/attention.hpp"
#include "feat/gradcheck.hpp"
#include "test_support.hpp"

namespace feat {
namespace {

using testing::desk_generator_config;
using testing::tiny_generator_config;

FeatureStack stack_for(const Generator& gen, std::uint64_t seed) {
  Rng rng(seed);
  return gen.synthesize(LatentWPlus{Tensor::randn(Shape{gen.num_layers(), gen.config().w_dim}, rng)}).second;
}

TEST(ComputeMask, ZeroParamsGiveHalf) {
  const Generator gen(desk_generator_config());
  AttentionParams p = init_attention(gen.config(), AttentionInit{});
  for (Tensor& t : p.reductions) t.fill(0.0);
  p.fusion.fill(0.0);
  const AttentionMask m = compute_mask(stack_for(gen, 1), 8, p);
  EXPECT_EQ(m.values.shape(), (Shape{1, 32, 32}));
  for (double v : m.values.values()) EXPECT_EQ(v, 0.5);
}

TEST(ComputeMask, ResolutionFollowsBlendLayer) {
  const Generator gen(desk_generator_config());
  const AttentionParams p = init_attention(gen.config(), AttentionInit{});
  const FeatureStack s = stack_for(gen, 2);
  for (std::size_t i = 1; i <= gen.num_layers(); ++i) {
    const std::size_t r = gen.config().resolution(i);
    EXPECT_EQ(compute_mask(s, i, p).values.shape(), (Shape{1, r, r})) << i;
  }
}

TEST(ComputeMask, RangeIsOpenUnitInterval) {
  const Generator gen(desk_generator_config());
  const AttentionParams p = init_attention(gen.config(), AttentionInit{8, true, 3});
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const AttentionMask m = compute_mask(stack_for(gen, seed), 6, p);
    for (double v : m.values.values()) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
  }
}

TEST(ComputeMask, MatchesNaiveReference) {
  const Generator gen(desk_generator_config());
  AttentionParams p = init_attention(gen.config(), AttentionInit{8, true, 4});
  p.fusion_bias[0] = -0.3;
  const FeatureStack s = stack_for(gen, 5);
  for (std::size_t i : {1u, 4u, 8u}) {
    const Tensor got = compute_mask(s, i, p).values;
    EXPECT_LE(testing::max_rel_diff(got, testing::naive_mask(s.maps, i, p)), 1e-13) << i;
  }
}

TEST(ComputeMask, SeededGoldenChecksum) {
  const Generator gen(desk_generator_config());
  const AttentionParams p = init_attention(gen.config(), AttentionInit{});
  const FeatureStack s = stack_for(gen, 6);
  const Tensor m = compute_mask(s, 8, p).values;
  EXPECT_LE(testing::max_rel_diff(m, testing::naive_mask(s.maps, 8, p)), 1e-13);
  EXPECT_NEAR(m.sum(), 508.57936511147608, 1e-9);
  EXPECT_NEAR(m.at(0, 5, 9), 0.57984942433329512, 1e-12);
}

TEST(ComputeMask, Errors) {
  const Generator gen(tiny_generator_config());
  const AttentionParams p = init_attention(gen.config(), AttentionInit{4, false, 1});
  const FeatureStack s = stack_for(gen, 7);
  EXPECT_THROW(compute_mask(s, 0, p), RangeError);
  EXPECT_THROW(compute_mask(s, 5, p), RangeError);
  FeatureStack short_stack = s;
  short_stack.maps.pop_back();
  EXPECT_THROW(compute_mask(short_stack, 2, p), ConfigError);
  AttentionParams wrong = p;
  wrong.reductions[0] = Tensor(Shape{4, 9});
  EXPECT_THROW(compute_mask(s, 2, wrong), ConfigError);
  EXPECT_THROW(wrong.validate(gen.config()), ConfigError);
}

TEST(ComputeMask, NearestResizeOption) {
  const Generator gen(desk_generator_config());
  const AttentionParams p = init_attention(gen.config(), AttentionInit{});
  const FeatureStack s = stack_for(gen, 8);
  const Tensor a = compute_mask(s, 8, p, ad::ResizeMode::kBilinear).values;
  const Tensor b = compute_mask(s, 8, p, ad::ResizeMode::kNearest).values;
  EXPECT_EQ(a.shape(), b.shape());
  EXPECT_FALSE(a == b);
}

TEST(ComputeMask, GradientOfMeanMatchesFiniteDifferences) {
  const Generator gen(tiny_generator_config());
  AttentionParams p = init_attention(gen.config(), AttentionInit{4, true, 9});
  const FeatureStack s = stack_for(gen, 10);
  const Objective f = [&](ad::Tape& t, std::span<const ad::Var> v) {
    std::vector<ad::Var> feats;
    for (const Tensor& m : s.maps) feats.push_back(t.leaf_ref(m));
    Bound b;
    b.vars.assign(v.begin(), v.end());
    return ad::mean(compute_mask(feats, 3, b, true));
  };
  GradCheckOptions o;
  o.num_coords = 1000;
  EXPECT_LE(grad_check(f, p.tensors(), o).max_rel_error, 1e-4);
}

TEST(ThresholdMask, StrictInequality) {
  const AttentionMask m{Tensor(Shape{1, 1, 3}, std::vector<double>{0.79, 0.80, 0.81})};
  EXPECT_EQ(threshold_mask(m, 0.8).values.storage(), (std::vector<double>{0, 0, 1}));
}

TEST(ThresholdMask, Extremes) {
  const Generator gen(desk_generator_config());
  const AttentionMask m = compute_mask(stack_for(gen, 11), 8, init_attention(gen.config(), {}));
  const AttentionMask all = threshold_mask(m, 0.0);
  const AttentionMask none = threshold_mask(m, 1.0);
  for (double v : all.values.values()) EXPECT_EQ(v, 1.0);
  for (double v : none.values.values()) EXPECT_EQ(v, 0.0);
}

TEST(ThresholdMask, Idempotent) {
  Rng rng(12);
  AttentionMask m{Tensor(Shape{1, 6, 6})};
  for (double& v : m.values.values()) v = rng.uniform();
  for (double tau : {0.0, 0.2, 0.5, 0.8, 0.99}) {
    const AttentionMask once = threshold_mask(m, tau);
    EXPECT_TRUE(threshold_mask(once, tau).values == once.values) << tau;
  }
}

TEST(ThresholdMask, RejectsTauOutsideUnitInterval) {
  const AttentionMask m = AttentionMask::constant(2, 2, 0.5);
  EXPECT_THROW(threshold_mask(m, -0.1), ArgumentError);
  EXPECT_THROW(threshold_mask(m, 1.5), ArgumentError);
}

}  // namespace
}  // namespace feat
