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

#include <cmath>

#include "feat/gradcheck.hpp"
#include "feat/ops.hpp"

namespace feat {
namespace {

Tensor random_tensor(Shape s, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  return Tensor::randn(std::move(s), rng, scale);
}

GradCheckOptions all_coords() {
  GradCheckOptions o;
  o.num_coords = 100000;
  return o;
}

TEST(GradCheck, QuadraticIsExact) {
  Tensor p = random_tensor({7}, 1);
  const Objective f = [](ad::Tape&, std::span<const ad::Var> v) {
    return ad::scale(ad::dot(v[0], v[0]), 0.5);
  };
  const GradCheckReport r = grad_check(f, {&p}, all_coords());
  EXPECT_EQ(r.coords, 7u);
  EXPECT_LE(r.max_rel_error, 1e-8);
}

TEST(GradCheck, ZeroEpsilonIsRejected) {
  Tensor p = random_tensor({3}, 2);
  const Objective f = [](ad::Tape&, std::span<const ad::Var> v) { return ad::sum(v[0]); };
  GradCheckOptions o;
  o.epsilon = 0.0;
  EXPECT_THROW(grad_check(f, {&p}, o), ArgumentError);
  o.epsilon = -1e-5;
  EXPECT_THROW(grad_check(f, {&p}, o), ArgumentError);
}

TEST(GradCheck, NonFiniteObjectiveIsNumericError) {
  Tensor p(Shape{2}, 0.0);
  const Objective f = [](ad::Tape& t, std::span<const ad::Var> v) {
    return ad::mul(ad::sum(v[0]), t.constant(Tensor::scalar(std::nan(""))));
  };
  EXPECT_THROW(grad_check(f, {&p}, {}), NumericError);
}

TEST(GradCheck, RestoresParameters) {
  Tensor p = random_tensor({5}, 3);
  const Tensor before = p;
  const Objective f = [](ad::Tape&, std::span<const ad::Var> v) { return ad::l2_norm(v[0]); };
  grad_check(f, {&p}, all_coords());
  EXPECT_TRUE(p == before);
}

TEST(GradCheck, DetectsCorruptedGradient) {
  Tensor p = random_tensor({5}, 4);
  const Objective f = [](ad::Tape&, std::span<const ad::Var> v) { return ad::scale(ad::dot(v[0], v[0]), 0.5); };
  GradCheckOptions o = all_coords();
  o.corrupt_analytic = [](std::vector<Tensor>& g) { g[0][0] += 1.0; };
  EXPECT_GT(grad_check(f, {&p}, o).max_rel_error, 1e-3);
}

TEST(GradCheck, RelativeErrorFloor) {
  EXPECT_EQ(relative_error(0.0, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(relative_error(1.0, 3.0), 0.5);
}

TEST(GradCheck, DenominatorFloorBoundsTinyComponents) {
  EXPECT_DOUBLE_EQ(relative_error(1e-9, 2e-9, 1e-6), 1e-3);
  EXPECT_DOUBLE_EQ(relative_error(1.0, 3.0, 1e-6), 0.5);
}

TEST(GradCheck, KinkInsideStepUsesOneSidedDifference) {
  // |m1 - m0| with the kink 3e-6 below m1 and eps = 1e-5.
  Tensor p(Shape{1, 1, 2}, std::vector<double>{0.0, 3e-6});
  const Objective f = [](ad::Tape&, std::span<const ad::Var> v) { return ad::total_variation(v[0], false); };
  GradCheckOptions o = all_coords();
  const GradCheckReport r = grad_check(f, {&p}, o);
  EXPECT_LE(r.max_rel_error, 1e-9);
  EXPECT_EQ(r.one_sided, 2u);
  o.one_sided_fallback = false;
  EXPECT_NEAR(grad_check(f, {&p}, o).max_rel_error, relative_error(1.0, 0.3), 1e-9);
  o.one_sided_fallback = true;
  o.corrupt_analytic = [](std::vector<Tensor>& g) { g[0][1] *= 1.5; };
  EXPECT_GT(grad_check(f, {&p}, o).max_rel_error, 0.1);
}

TEST(GradCheck, SubgradientBracketedByOneSidedSlopes) {
  // x1 + 0.005 (|x1 - x0| + |x2 - x1|) with kinks at x1 = 2e-6 and x1 = -3e-6,
  // both inside the step around x1 = 0. The analytic slope 1 lies strictly
  // between the one-sided slopes, and the central difference is off by 2.5e-4.
  Tensor p(Shape{1, 1, 3}, std::vector<double>{2e-6, 0.0, -3e-6});
  const Objective f = [](ad::Tape& t, std::span<const ad::Var> v) {
    const ad::Var pick = t.constant(Tensor(Shape{1, 1, 3}, std::vector<double>{0.0, 1.0, 0.0}));
    return ad::add(ad::dot(v[0], pick), ad::scale(ad::total_variation(v[0], false), 0.005));
  };
  GradCheckOptions o = all_coords();
  const GradCheckReport r = grad_check(f, {&p}, o);
  EXPECT_LE(r.max_rel_error, 1e-6);
  EXPECT_EQ(r.one_sided, 3u);
  o.one_sided_fallback = false;
  EXPECT_GT(grad_check(f, {&p}, o).max_rel_error, 1e-4);
  o.one_sided_fallback = true;
  o.corrupt_analytic = [](std::vector<Tensor>& g) { g[0][1] += 0.05; };
  EXPECT_GT(grad_check(f, {&p}, o).max_rel_error, 1e-2);
}

struct OpCase {
  const char* name;
  std::vector<Shape> shapes;
  Objective f;
};

class OpGradient : public ::testing::TestWithParam<int> {};

std::vector<OpCase> op_cases() {
  auto probe = [](ad::Tape& t, ad::Var y) {
    // Random linear functional of y so every output entry matters.
    Rng rng(99);
    return ad::dot(ad::reshape(y, Shape{y.value().size()}),
                   t.constant(Tensor::randn(Shape{y.value().size()}, rng)));
  };
  return {
      {"add_sub_mul", {{3, 4}, {3, 4}},
       [=](ad::Tape& t, std::span<const ad::Var> v) { return probe(t, ad::mul(ad::add(v[0], v[1]), ad::sub(v[0], v[1]))); }},
      {"leaky_relu", {{10}},
       [=](ad::Tape& t, std::span<const ad::Var> v) { return probe(t, ad::leaky_relu(v[0])); }},
      {"sigmoid", {{2, 3, 3}},
       [=](ad::Tape& t, std::span<const ad::Var> v) { return probe(t, ad::sigmoid(v[0])); }},
      {"normalize", {{6}},
       [=](ad::Tape& t, std::span<const ad::Var> v) { return probe(t, ad::normalize(v[0])); }},
      {"linear_bias", {{4}, {3, 4}, {3}},
       [=](ad::Tape& t, std::span<const ad::Var> v) { return probe(t, ad::linear(v[0], v[1], &v[2])); }},
      {"linear_batch", {{2, 4}, {3, 4}},
       [=](ad::Tape& t, std::span<const ad::Var> v) { return probe(t, ad::linear(v[0], v[1])); }},
      {"gather_scatter", {{4, 3}, {2, 3}},
       [=](ad::Tape& t, std::span<const ad::Var> v) {
         return probe(t, ad::scatter_add_rows(v[0], {1, 3}, ad::mul(ad::gather_rows(v[0], {0, 2}), v[1])));
       }},
      {"modulated_conv_demod", {{3, 5, 5}, {2, 3, 3, 3}, {3}},
       [=](ad::Tape& t, std::span<const ad::Var> v) { return probe(t, ad::modulated_conv(v[0], v[1], v[2], true)); }},
      {"modulated_conv_1x1", {{3, 4, 4}, {2, 3, 1, 1}, {3}},
       [=](ad::Tape& t, std::span<const ad::Var> v) { return probe(t, ad::modulated_conv(v[0], v[1], v[2], false)); }},
      {"conv1x1_bias", {{3, 4, 4}, {2, 3}, {2}},
       [=](ad::Tape& t, std::span<const ad::Var> v) { return probe(t, ad::add_channel_bias(ad::conv1x1(v[0], v[1]), v[2])); }},
      {"resize_bilinear_up", {{2, 3, 3}},
       [=](ad::Tape& t, std::span<const ad::Var> v) { return probe(t, ad::resize(v[0], 7, 5)); }},
      {"resize_bilinear_down", {{2, 8, 8}},
       [=](ad::Tape& t, std::span<const ad::Var> v) { return probe(t, ad::resize(v[0], 3, 3)); }},
      {"upsample_avgpool", {{2, 3, 3}},
       [=](ad::Tape& t, std::span<const ad::Var> v) { return probe(t, ad::avg_pool(ad::upsample_nearest2x(v[0]), 3)); }},
      {"region_mean", {{3, 6, 6}},
       [=](ad::Tape& t, std::span<const ad::Var> v) { return probe(t, ad::region_channel_mean(v[0], 1, 2, 4, 6)); }},
      {"concat", {{2, 3, 3}, {1, 3, 3}},
       [=](ad::Tape& t, std::span<const ad::Var> v) {
         const ad::Var parts[] = {v[0], v[1]};
         return probe(t, ad::concat_channels(parts));
       }},
      {"blend", {{3, 4, 4}, {3, 4, 4}, {1, 4, 4}},
       [=](ad::Tape& t, std::span<const ad::Var> v) { return probe(t, ad::blend(v[0], v[1], ad::sigmoid(v[2]))); }},
      {"tv_squared", {{1, 4, 5}},
       [=](ad::Tape&, std::span<const ad::Var> v) { return ad::total_variation(v[0], true); }},
      {"tv_absolute", {{1, 4, 5}},
       [=](ad::Tape&, std::span<const ad::Var> v) { return ad::total_variation(v[0], false); }},
      {"l2_norm_mean", {{3, 4}},
       [=](ad::Tape&, std::span<const ad::Var> v) { return ad::add(ad::l2_norm(v[0]), ad::mean(v[0])); }},
  };
}

TEST_P(OpGradient, MatchesCentralDifferences) {
  const OpCase c = op_cases()[static_cast<std::size_t>(GetParam())];
  std::vector<Tensor> params;
  std::uint64_t seed = 10;
  for (const Shape& s : c.shapes) params.push_back(random_tensor(s, ++seed));
  std::vector<Tensor*> ptrs;
  for (Tensor& p : params) ptrs.push_back(&p);
  const GradCheckReport r = grad_check(c.f, ptrs, all_coords());
  EXPECT_LE(r.max_rel_error, 1e-6) << c.name << " worst tensor " << r.worst_tensor << " index "
                                   << r.worst_index;
}

INSTANTIATE_TEST_SUITE_P(Ops, OpGradient, ::testing::Range(0, static_cast<int>(op_cases().size())),
                         [](const ::testing::TestParamInfo<int>& info) {
                           return std::string(op_cases()[static_cast<std::size_t>(info.param)].name);
                         });

TEST(Tape, FrozenLeavesRecordNoGradient) {
  ad::Tape t;
  const Tensor a(Shape{2}, 1.0);
  const ad::Var x = t.leaf_ref(a, false);
  const ad::Var y = t.leaf(Tensor(Shape{2}, 2.0), true);
  const ad::Var z = ad::sum(ad::mul(x, y));
  t.backward(z);
  EXPECT_TRUE(t.grad(x) == Tensor(Shape{2}, 0.0));
  EXPECT_TRUE(t.grad(y) == Tensor(Shape{2}, 1.0));
}

TEST(Tape, BackwardRequiresScalarRoot) {
  ad::Tape t;
  const ad::Var x = t.leaf(Tensor(Shape{2}, 1.0), true);
  EXPECT_THROW(t.backward(x), ShapeError);
}

TEST(Tape, ValueReferencesSurviveGrowth) {
  ad::Tape t;
  const ad::Var x = t.leaf(Tensor(Shape{3}, 1.5), true);
  const Tensor& ref = x.value();
  for (int k = 0; k < 5000; ++k) t.constant(Tensor::scalar(k));
  EXPECT_EQ(ref[2], 1.5);
}

TEST(Tape, MixingTapesIsRejected) {
  ad::Tape a, b;
  EXPECT_THROW(ad::add(a.leaf(Tensor::scalar(1), true), b.leaf(Tensor::scalar(1), true)), ArgumentError);
}

TEST(Resize, SameSizeIsIdentity) {
  ad::Tape t;
  const Tensor x = random_tensor({2, 4, 4}, 5);
  EXPECT_TRUE(ad::resize(t.leaf_ref(x), 4, 4).value() == x);
}

TEST(Resize, NearestPicksHalfPixelCentres) {
  ad::Tape t;
  const Tensor x(Shape{1, 1, 4}, std::vector<double>{0, 1, 2, 3});
  const Tensor y = ad::resize(t.leaf_ref(x), 1, 2, ad::ResizeMode::kNearest).value();
  EXPECT_EQ(y[0], 1.0);
  EXPECT_EQ(y[1], 3.0);
}

TEST(Resize, BilinearUpsamplePreservesConstants) {
  ad::Tape t;
  const Tensor x(Shape{1, 3, 3}, 0.7);
  for (double v : ad::resize(t.leaf_ref(x), 8, 8).value().values()) EXPECT_NEAR(v, 0.7, 1e-15);
}

}  // namespace
}  // namespace feat
