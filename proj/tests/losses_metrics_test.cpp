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

#include <Eigen/Dense>

#include "feat/gradcheck.hpp"
#include "feat/losses.hpp"
#include "feat/metrics.hpp"
#include "test_support.hpp"

namespace feat {
namespace {

AttentionMask mask2x2(double a, double b, double c, double d) {
  return AttentionMask{Tensor(Shape{1, 2, 2}, std::vector<double>{a, b, c, d})};
}

/// Embedder whose image and text embeddings are fixed vectors, for exact
/// distance fixtures.
class FixedEmbedder final : public JointEmbedder {
 public:
  FixedEmbedder(std::vector<double> image, std::vector<double> text) : image_(std::move(image)), text_(std::move(text)) {}
  std::size_t embed_dim() const override { return image_.size(); }
  std::size_t input_resolution() const override { return 2; }
  ad::Var embed_resized(ad::Var image) const override {
    return image.tape->constant(Tensor(Shape{image_.size()}, image_));
  }
  std::vector<double> embed_text(std::string_view) const override { return text_; }

 private:
  std::vector<double> image_, text_;
};

double clip_with(std::vector<double> img, std::vector<double> txt) {
  const FixedEmbedder e(std::move(img), std::move(txt));
  return clip_loss(ImageTensor{Tensor(Shape{3, 2, 2}, 0.0)}, "x", e);
}

TEST(ClipLoss, UnitValues) {
  EXPECT_NEAR(clip_with({0.6, 0.8}, {0.6, 0.8}), 0.0, 1e-12);
  EXPECT_NEAR(clip_with({1.0, 0.0}, {0.0, 1.0}), 1.0, 1e-12);
  EXPECT_NEAR(clip_with({0.6, 0.8}, {-0.6, -0.8}), 2.0, 1e-12);
}

TEST(ClipLoss, DecreasesAlongGeodesicTowardText) {
  const RegionStatEmbedder e = [] {
    RegionStatEmbedder r(3, 4, Region{0, 0, 4, 4}, 5);
    r.add_color_token("target", {0.2, -0.7, 0.4});
    return r;
  }();
  const Eigen::Vector3d start(0.5, 0.3, -0.6), goal = Eigen::Vector3d(0.2, -0.7, 0.4).normalized();
  const Eigen::Vector3d s0 = start.normalized();
  const double theta = std::acos(s0.dot(goal));
  double prev = 3.0;
  for (int k = 0; k <= 10; ++k) {
    const double t = k / 10.0;
    const Eigen::Vector3d c = (std::sin((1 - t) * theta) * s0 + std::sin(t * theta) * goal) / std::sin(theta);
    ImageTensor img{Tensor(Shape{3, 4, 4})};
    for (std::size_t ch = 0; ch < 3; ++ch) {
      for (std::size_t p = 0; p < 16; ++p) img.pixels[ch * 16 + p] = 0.5 * c[static_cast<Eigen::Index>(ch)];
    }
    const double loss = clip_loss(img, "target", e);
    EXPECT_LT(loss, prev) << t;
    EXPECT_NEAR(loss, 1.0 - std::cos((1 - t) * theta), 1e-12);
    prev = loss;
  }
}

TEST(AttLoss, UnitValues) {
  EXPECT_DOUBLE_EQ(att_loss(mask2x2(1, 0, 0, 0)), 0.25);
  EXPECT_NEAR(att_loss(AttentionMask::constant(5, 5, 0.37)), 0.37, 1e-12);
  EXPECT_DOUBLE_EQ(att_loss(AttentionMask::constant(3, 3, 1.0)), 1.0);
}

TEST(TvLoss, UnitValues) {
  EXPECT_EQ(tv_loss(AttentionMask::constant(4, 4, 0.3)), 0.0);
  EXPECT_DOUBLE_EQ(tv_loss(mask2x2(0, 1, 0, 1)), 2.0);
  EXPECT_DOUBLE_EQ(tv_loss(mask2x2(0, 1, 1, 0)), 4.0);
  EXPECT_DOUBLE_EQ(tv_loss(mask2x2(0, 0.5, 0, 0.5), TvMode::kAbsolute), 1.0);
  EXPECT_DOUBLE_EQ(tv_loss(mask2x2(0, 0.5, 0, 0.5), TvMode::kSquared), 0.5);
}

TEST(TvLoss, MatchesNaiveSum) {
  Rng rng(1);
  AttentionMask m{Tensor(Shape{1, 5, 7})};
  for (double& v : m.values.values()) v = rng.uniform();
  double ref = 0.0;
  for (std::size_t y = 0; y < 5; ++y) {
    for (std::size_t x = 0; x < 7; ++x) {
      if (y + 1 < 5) ref += std::abs(m.values.at(0, y + 1, x) - m.values.at(0, y, x));
      if (x + 1 < 7) ref += std::abs(m.values.at(0, y, x + 1) - m.values.at(0, y, x));
    }
  }
  EXPECT_NEAR(tv_loss(m), ref, 1e-12);
}

TEST(TvLoss, RejectsTinyMasks) {
  EXPECT_THROW(tv_loss(AttentionMask::constant(1, 4, 0.5)), ArgumentError);
  EXPECT_THROW(tv_loss(AttentionMask::constant(4, 1, 0.5)), ArgumentError);
}

TEST(LatentLoss, UnitValues) {
  Rng rng(2);
  const LatentWPlus w{Tensor::randn(Shape{4, 3}, rng)};
  EXPECT_EQ(latent_loss(w, w), 0.0);
  LatentWPlus one = w;
  const double alpha = 0.1, v[3] = {1.0, -2.0, 2.0};
  for (std::size_t k = 0; k < 3; ++k) one.rows[3 + k] += alpha * v[k];
  EXPECT_NEAR(latent_loss(w, one), alpha * 3.0, 1e-12);
  LatentWPlus zero{Tensor(Shape{2, 2}, 0.0)};
  LatentWPlus two{Tensor(Shape{2, 2}, std::vector<double>{3, 4, 3, 4})};
  EXPECT_NEAR(latent_loss(zero, two), std::sqrt(50.0), 1e-12);
  EXPECT_THROW(latent_loss(zero, w), ShapeError);
}

TEST(TotalLoss, UnitValues) {
  const LossWeights defaults;
  EXPECT_EQ(defaults.lambda_att, 0.005);
  EXPECT_EQ(defaults.lambda_tv, 0.00001);
  EXPECT_EQ(defaults.lambda_l2, 0.8);
  EXPECT_NEAR(total_loss({1, 1, 1, 1}, defaults).total, 1.80501, 1e-12);
  EXPECT_EQ(total_loss({0.7, 3, 4, 5}, LossWeights{0, 0, 0}).total, 0.7);
  EXPECT_EQ(total_loss({0, 0, 0, 0}, defaults).total, 0.0);
  EXPECT_THROW(total_loss({std::nan(""), 0, 0, 0}, defaults), NumericError);
  EXPECT_THROW((LossWeights{-1, 0, 0}.validate()), ConfigError);
}

TEST(TotalLoss, ReportInvariantOnRandomParts) {
  Rng rng(3);
  for (int k = 0; k < 50; ++k) {
    const LossParts p{rng.uniform() * 2, rng.uniform(), rng.uniform() * 100, rng.uniform() * 5};
    const LossWeights w{rng.uniform(), rng.uniform(), rng.uniform()};
    const LossReport r = total_loss(p, w);
    EXPECT_NEAR(r.total, r.clip + w.lambda_att * r.att + w.lambda_tv * r.tv + w.lambda_l2 * r.l2, 1e-10);
  }
}

TEST(MaskLosses, GradientsMatchFiniteDifferences) {
  Rng rng(4);
  Tensor m(Shape{1, 6, 5});
  for (double& v : m.values()) v = rng.uniform();
  for (TvMode mode : {TvMode::kAbsolute, TvMode::kSquared}) {
    const Objective f = [mode](ad::Tape&, std::span<const ad::Var> v) {
      return ad::add(att_loss(v[0]), tv_loss(v[0], mode));
    };
    GradCheckOptions o;
    o.num_coords = 30;
    EXPECT_LE(grad_check(f, {&m}, o).max_rel_error, 1e-4);
  }
}

// -- Frechet distance ---------------------------------------------------------

Eigen::MatrixXd random_spd(int d, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd a(d, d);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) a(i, j) = rng.normal();
  }
  return a * a.transpose() / d + 0.1 * Eigen::MatrixXd::Identity(d, d);
}

/// Denman-Beavers iteration for the principal square root of a general
/// matrix with positive spectrum.
Eigen::MatrixXd db_sqrt(const Eigen::MatrixXd& a) {
  Eigen::MatrixXd y = a, z = Eigen::MatrixXd::Identity(a.rows(), a.cols());
  for (int k = 0; k < 60; ++k) {
    const Eigen::MatrixXd yi = y.inverse(), zi = z.inverse();
    y = 0.5 * (y + zi);
    z = 0.5 * (z + yi);
  }
  return y;
}

TEST(Frechet, ClosedForms) {
  const Eigen::VectorXd mu = Eigen::VectorXd::LinSpaced(4, -1, 2);
  const Eigen::MatrixXd cov = random_spd(4, 5);
  EXPECT_NEAR(frechet_distance(mu, cov, mu, cov), 0.0, 1e-8);
  Eigen::VectorXd mu2 = mu;
  mu2(1) += 2.0;
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(4, 4);
  EXPECT_NEAR(frechet_distance(mu, eye, mu2, eye), 4.0, 1e-8);
  Eigen::VectorXd a(1), b(1);
  a << 0.3;
  b << -1.2;
  Eigen::MatrixXd va(1, 1), vb(1, 1);
  va << 2.25;
  vb << 0.16;
  EXPECT_NEAR(frechet_distance(a, va, b, vb), 1.5 * 1.5 + (1.5 - 0.4) * (1.5 - 0.4), 1e-8);
}

TEST(Frechet, MatchesDenmanBeaversReference) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Eigen::MatrixXd c1 = random_spd(5, 10 + s), c2 = random_spd(5, 20 + s);
    Rng rng(30 + s);
    Eigen::VectorXd m1(5), m2(5);
    for (int k = 0; k < 5; ++k) {
      m1(k) = rng.normal();
      m2(k) = rng.normal();
    }
    const double ref = (m1 - m2).squaredNorm() + c1.trace() + c2.trace() - 2.0 * db_sqrt(c1 * c2).trace();
    EXPECT_NEAR(frechet_distance(m1, c1, m2, c2), ref, 1e-8);
    EXPECT_NEAR(frechet_distance(m1, c1, m2, c2), frechet_distance(m2, c2, m1, c1), 1e-8);
  }
}

TEST(Frechet, RankDeficientCovariancesClampToZero) {
  Eigen::MatrixXd v(3, 1);
  v << 1, 2, -1;
  const Eigen::MatrixXd c = v * v.transpose();
  const Eigen::VectorXd mu = Eigen::VectorXd::Zero(3);
  const double d = frechet_distance(mu, c, mu, c);
  EXPECT_GE(d, 0.0);
  EXPECT_LE(d, 1e-7);
}

TEST(Frechet, RejectsAsymmetricCovariance) {
  Eigen::MatrixXd c = Eigen::MatrixXd::Identity(2, 2);
  c(0, 1) = 1e-6;
  const Eigen::VectorXd mu = Eigen::VectorXd::Zero(2);
  EXPECT_THROW(frechet_distance(mu, c, mu, Eigen::MatrixXd::Identity(2, 2)), ArgumentError);
  EXPECT_THROW(frechet_distance(mu, Eigen::MatrixXd::Identity(3, 3), mu, Eigen::MatrixXd::Identity(2, 2)), ShapeError);
}

TEST(Frechet, FitGaussianMatchesNaiveMoments) {
  const std::vector<std::vector<double>> x{{1, 2}, {3, 0}, {-1, 1}, {2, 5}};
  const Gaussian g = fit_gaussian(x);
  EXPECT_NEAR(g.mean(0), 1.25, 1e-15);
  EXPECT_NEAR(g.mean(1), 2.0, 1e-15);
  double sxy = 0.0;
  for (const auto& r : x) sxy += (r[0] - 1.25) * (r[1] - 2.0);
  EXPECT_NEAR(g.cov(0, 1), sxy / 3.0, 1e-14);
  EXPECT_NEAR(g.cov(1, 0), g.cov(0, 1), 0.0);
}

// -- identity metrics ---------------------------------------------------------

TEST(IdentityMetrics, UnitValues) {
  const std::vector<std::vector<double>> e{{1, 0, 0}, {0, 1, 0}};
  IdentityMetrics m = identity_metrics(e, e);
  EXPECT_NEAR(m.cosine_similarity, 1.0, 1e-15);
  EXPECT_NEAR(m.euclidean_distance, 0.0, 1e-15);
  m = identity_metrics(e, {{0, 1, 0}, {0, 0, 1}});
  EXPECT_NEAR(m.cosine_similarity, 0.0, 1e-15);
  EXPECT_NEAR(m.euclidean_distance, std::sqrt(2.0), 1e-15);
  m = identity_metrics(e, {{-1, 0, 0}, {0, -1, 0}});
  EXPECT_NEAR(m.cosine_similarity, -1.0, 1e-15);
  EXPECT_NEAR(m.euclidean_distance, 2.0, 1e-15);
  EXPECT_THROW(identity_metrics(e, {{1, 0, 0}}), ShapeError);
}

TEST(IdentityMetrics, DistanceAndCosineAgreeOnUnitVectors) {
  Rng rng(40);
  for (int k = 0; k < 200; ++k) {
    std::vector<double> a(8), b(8);
    for (double& v : a) v = rng.normal();
    for (double& v : b) v = rng.normal();
    a = normalized(a);
    b = normalized(b);
    const double cs = cosine_similarity(a, b), ed = euclidean_distance(a, b);
    EXPECT_NEAR(ed * ed, 2.0 - 2.0 * cs, 1e-9);
  }
}

}  // namespace
}  // namespace feat
