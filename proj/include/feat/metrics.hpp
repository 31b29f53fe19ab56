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

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <vector>

#include "feat/error.hpp"
#include "feat/log.hpp"

namespace feat {

struct Gaussian {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

/// Sample mean and unbiased covariance of row vectors.
inline Gaussian fit_gaussian(const std::vector<std::vector<double>>& samples) {
  if (samples.empty()) throw ArgumentError("fit_gaussian: no samples");
  const auto n = static_cast<Eigen::Index>(samples.size());
  const auto d = static_cast<Eigen::Index>(samples[0].size());
  Eigen::MatrixXd x(n, d);
  for (Eigen::Index r = 0; r < n; ++r) {
    if (static_cast<Eigen::Index>(samples[static_cast<std::size_t>(r)].size()) != d) {
      throw ShapeError("fit_gaussian: ragged samples");
    }
    for (Eigen::Index c = 0; c < d; ++c) x(r, c) = samples[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
  }
  Gaussian g;
  g.mean = x.colwise().mean().transpose();
  const Eigen::MatrixXd centered = x.rowwise() - g.mean.transpose();
  g.cov = n > 1 ? Eigen::MatrixXd((centered.transpose() * centered) / static_cast<double>(n - 1))
                : Eigen::MatrixXd::Zero(d, d);
  return g;
}

namespace detail {

/// Symmetric PSD square root; negative eigenvalues are clamped to zero.
inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& a) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
  const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

inline void require_symmetric(const Eigen::MatrixXd& c, const char* which) {
  if (c.rows() != c.cols()) throw ArgumentError(std::string(which) + " is not square");
  const double asym = (c - c.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-8) {
    throw ArgumentError(std::string(which) + " is not symmetric (max asymmetry " +
                        std::to_string(asym) + ")");
  }
}

}  // namespace detail

/// Frechet distance between N(mu1, cov1) and N(mu2, cov2):
/// ||mu1 - mu2||^2 + Tr(cov1 + cov2 - 2 (cov1 cov2)^{1/2}).
///
/// Tr((cov1 cov2)^{1/2}) is evaluated as Tr((A cov2 A)^{1/2}) with
/// A = cov1^{1/2}, which has the same spectrum and stays symmetric.
inline double frechet_distance(const Eigen::VectorXd& mu1, const Eigen::MatrixXd& cov1,
                               const Eigen::VectorXd& mu2, const Eigen::MatrixXd& cov2) {
  if (mu1.size() != mu2.size() || cov1.rows() != mu1.size() || cov2.rows() != mu2.size()) {
    throw ShapeError("frechet_distance: dimension mismatch");
  }
  detail::require_symmetric(cov1, "cov1");
  detail::require_symmetric(cov2, "cov2");
  const Eigen::MatrixXd a = detail::psd_sqrt(cov1);
  Eigen::MatrixXd m = a * cov2 * a;
  m = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
  const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double d = (mu1 - mu2).squaredNorm() + cov1.trace() + cov2.trace() - 2.0 * tr_sqrt;
  if (d < 0.0) {
    log::debug("frechet_distance: clamped negative value " + std::to_string(d) + " to 0");
    return 0.0;
  }
  return d;
}

inline double frechet_distance(const Gaussian& a, const Gaussian& b) {
  return frechet_distance(a.mean, a.cov, b.mean, b.cov);
}

struct IdentityMetrics {
  double cosine_similarity = 0.0;
  double euclidean_distance = 0.0;
};

inline double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    ab += a[k] * b[k];
    aa += a[k] * a[k];
    bb += b[k] * b[k];
  }
  return ab / std::sqrt(aa * bb);
}

inline double euclidean_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double ss = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) ss += (a[k] - b[k]) * (a[k] - b[k]);
  return std::sqrt(ss);
}

/// Mean per-pair cosine similarity and Euclidean distance.
inline IdentityMetrics identity_metrics(const std::vector<std::vector<double>>& original,
                                        const std::vector<std::vector<double>>& edited) {
  if (original.size() != edited.size()) {
    throw ShapeError("identity_metrics: " + std::to_string(original.size()) + " originals vs " +
                     std::to_string(edited.size()) + " edits");
  }
  if (original.empty()) throw ArgumentError("identity_metrics: no pairs");
  IdentityMetrics m;
  for (std::size_t k = 0; k < original.size(); ++k) {
    if (original[k].size() != edited[k].size()) throw ShapeError("identity_metrics: length mismatch");
    m.cosine_similarity += cosine_similarity(original[k], edited[k]);
    m.euclidean_distance += euclidean_distance(original[k], edited[k]);
  }
  m.cosine_similarity /= static_cast<double>(original.size());
  m.euclidean_distance /= static_cast<double>(original.size());
  return m;
}

}  // namespace feat
