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

// Central-difference gradient checking for tape objectives, and a suite that
// checks every loss term through the edit pipeline.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "feat/autodiff.hpp"
#include "feat/editor.hpp"
#include "feat/error.hpp"
#include "feat/losses.hpp"
#include "feat/params.hpp"
#include "feat/rng.hpp"
#include "feat/trainer.hpp"

namespace feat {

/// Scalar objective of `params`, each bound as a tape leaf in order.
using Objective = std::function<ad::Var(ad::Tape&, std::span<const ad::Var> params)>;

struct GradCheckOptions {
  double epsilon = 1e-5;
  std::size_t num_coords = 64;
  std::uint64_t seed = 0;
  /// Lower bound on |analytic| + |numeric| in the error denominator;
  /// components smaller than this are compared in absolute terms.
  double denominator_floor = 1e-12;
  /// Also compare against the one-sided differences, so kinks of |.| (the
  /// absolute TV term) inside [x - eps, x + eps] are not reported as errors.
  /// A convex kink puts the subgradient between the backward and forward
  /// slopes; an analytic value inside a bracket no wider than 1% of the
  /// slopes counts as exact.
  bool one_sided_fallback = true;
  /// Test hook: edits the analytic gradients before comparison.
  std::function<void(std::vector<Tensor>&)> corrupt_analytic;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t coords = 0;
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  /// Coordinates where a one-sided difference agreed better than the central one.
  std::size_t one_sided = 0;
};

inline double relative_error(double analytic, double numeric, double floor = 1e-12) {
  return std::abs(analytic - numeric) / std::max(floor, std::abs(analytic) + std::abs(numeric));
}

namespace detail {

inline double eval_objective(const Objective& f, const std::vector<Tensor*>& params) {
  ad::Tape tape;
  std::vector<ad::Var> vars;
  for (const Tensor* p : params) vars.push_back(tape.leaf_ref(*p, false));
  const ad::Var out = f(tape, vars);
  if (out.value().size() != 1) throw ShapeError("grad_check: objective is not a scalar");
  const double v = out.value()[0];
  if (!std::isfinite(v)) throw NumericError("grad_check: non-finite objective value");
  return v;
}

}  // namespace detail

/// Compares the tape gradient of `f` against central differences on
/// opts.num_coords coordinates drawn without replacement across `params`.
/// Parameters are restored exactly afterwards.
inline GradCheckReport grad_check(const Objective& f, const std::vector<Tensor*>& params,
                                  const GradCheckOptions& opts = {}) {
  if (!(opts.epsilon > 0.0) || !std::isfinite(opts.epsilon)) {
    throw ArgumentError("grad_check: epsilon must be positive, got " + std::to_string(opts.epsilon));
  }
  if (params.empty()) throw ArgumentError("grad_check: no parameters");

  std::vector<Tensor> analytic;
  {
    ad::Tape tape;
    std::vector<ad::Var> vars;
    for (const Tensor* p : params) vars.push_back(tape.leaf_ref(*p, true));
    const ad::Var out = f(tape, vars);
    if (out.value().size() != 1) throw ShapeError("grad_check: objective is not a scalar");
    if (!std::isfinite(out.value()[0])) throw NumericError("grad_check: non-finite objective value");
    tape.backward(out);
    for (const ad::Var& v : vars) analytic.push_back(tape.grad(v));
  }
  if (opts.corrupt_analytic) opts.corrupt_analytic(analytic);

  std::vector<std::size_t> offsets{0};
  for (const Tensor* p : params) offsets.push_back(offsets.back() + p->size());
  const std::size_t total = offsets.back();
  const std::size_t count = std::min(opts.num_coords, total);
  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(opts.seed);
  for (std::size_t k = 0; k < count; ++k) {
    std::swap(order[k], order[k + rng.below(total - k)]);
  }
  order.resize(count);

  GradCheckReport report;
  report.coords = count;
  report.max_rel_error = -1.0;
  const double base = detail::eval_objective(f, params);
  for (std::size_t flat : order) {
    const auto it = std::upper_bound(offsets.begin(), offsets.end(), flat);
    const std::size_t t = static_cast<std::size_t>(it - offsets.begin()) - 1;
    const std::size_t i = flat - offsets[t];
    double& x = (*params[t])[i];
    const double saved = x;
    x = saved + opts.epsilon;
    const double up = detail::eval_objective(f, params);
    x = saved - opts.epsilon;
    const double down = detail::eval_objective(f, params);
    x = saved;
    double numeric = (up - down) / (2.0 * opts.epsilon);
    const double a = analytic[t][i];
    double err = relative_error(a, numeric, opts.denominator_floor);
    if (opts.one_sided_fallback && err > 0.0) {
      const double fwd = (up - base) / opts.epsilon;
      const double bwd = (base - down) / opts.epsilon;
      bool used = false;
      for (const double side : {fwd, bwd}) {
        const double e = relative_error(a, side, opts.denominator_floor);
        if (e < err) {
          err = e;
          numeric = side;
          used = true;
        }
      }
      const double lo = std::min(fwd, bwd), hi = std::max(fwd, bwd);
      if (a >= lo && a <= hi && hi - lo <= 0.01 * (std::abs(fwd) + std::abs(bwd))) {
        err = 0.0;
        numeric = a;
        used = true;
      }
      report.one_sided += used ? 1 : 0;
    }
    if (err > report.max_rel_error) {
      report.max_rel_error = err;
      report.worst_tensor = t;
      report.worst_index = i;
      report.worst_analytic = a;
      report.worst_numeric = numeric;
    }
  }
  report.max_rel_error = std::max(report.max_rel_error, 0.0);
  return report;
}

// -- edit-pipeline suite ------------------------------------------------------

enum class LossTerm { kClip, kAtt, kTv, kL2, kTotal };
enum class GradTarget { kMapper, kAttention, kBoth };

inline const char* to_string(LossTerm t) {
  switch (t) {
    case LossTerm::kClip: return "clip";
    case LossTerm::kAtt: return "att";
    case LossTerm::kTv: return "tv";
    case LossTerm::kL2: return "l2";
    case LossTerm::kTotal: return "total";
  }
  return "?";
}

inline const char* to_string(GradTarget t) {
  switch (t) {
    case GradTarget::kMapper: return "mapper";
    case GradTarget::kAttention: return "attention";
    case GradTarget::kBoth: return "mapper+attention";
  }
  return "?";
}

struct EditCheckSetup {
  const Generator* gen = nullptr;
  const JointEmbedder* embedder = nullptr;
  std::string prompt;
  LatentWPlus wplus;
  LossWeights weights;
  TvMode tv_mode = TvMode::kAbsolute;
};

/// Objective that evaluates one loss term through the soft-mask edit
/// pipeline. `model` must outlive the returned objective; its tensors are
/// bound positionally (mapper first, then attention, filtered by target).
inline Objective edit_objective_fn(const EditCheckSetup& setup, EditModel& model, LossTerm term,
                                   GradTarget target, std::vector<Tensor*>& params_out) {
  const std::vector<Tensor*> mapper = model.mapper.tensors();
  const std::vector<Tensor*> attention = model.attention.tensors();
  params_out.clear();
  if (target != GradTarget::kAttention) params_out.insert(params_out.end(), mapper.begin(), mapper.end());
  if (target != GradTarget::kMapper) params_out.insert(params_out.end(), attention.begin(), attention.end());
  const std::vector<double> text = setup.embedder->embed_text(setup.prompt);

  return [setup, &model, term, target, text, n_map = mapper.size()](ad::Tape& tape,
                                                                     std::span<const ad::Var> vars) {
    Bound m, a;
    std::size_t k = 0;
    if (target != GradTarget::kAttention) {
      m.vars.assign(vars.begin(), vars.begin() + static_cast<std::ptrdiff_t>(n_map));
      k = n_map;
    } else {
      m = bind_params(tape, std::as_const(model.mapper).tensors(), false);
    }
    if (target != GradTarget::kMapper) {
      a.vars.assign(vars.begin() + static_cast<std::ptrdiff_t>(k), vars.end());
    } else {
      a = bind_params(tape, std::as_const(model.attention).tensors(), false);
    }
    EditConfig cfg = model.config;
    cfg.mask_mode = MaskMode::kSoft;
    const ad::Var w = tape.leaf_ref(setup.wplus.rows);
    if (term == LossTerm::kL2) {
      return latent_loss(w, apply_mapper(w, m, model.mapper.per_layer, cfg.alpha, cfg.scope));
    }
    if (term == LossTerm::kAtt || term == LossTerm::kTv) {
      const SynthesisPass orig = setup.gen->synthesize(w);
      const ad::Var mask = compute_mask(orig.features, cfg.blend_layer, a, model.attention.use_bias,
                                        cfg.attention_resize);
      return term == LossTerm::kAtt ? att_loss(mask) : tv_loss(mask, setup.tv_mode);
    }
    const EditPass pass = run_edit(*setup.gen, w, m, model.mapper.per_layer, cfg,
                                   attention_mask_fn(a, model.attention.use_bias, cfg));
    const ObjectiveTerms t = edit_objective(pass, w, text, *setup.embedder, setup.weights, setup.tv_mode);
    return term == LossTerm::kClip ? t.clip : t.total;
  };
}

struct GradCheckCase {
  LossTerm term = LossTerm::kTotal;
  GradTarget target = GradTarget::kBoth;
  GradCheckReport report;
  bool pass = false;

  std::string name() const { return std::string(to_string(term)) + "/" + to_string(target); }
};

/// The term/target pairs checked by grad_check_suite.
inline std::vector<std::pair<LossTerm, GradTarget>> default_check_cases() {
  return {{LossTerm::kClip, GradTarget::kMapper},  {LossTerm::kClip, GradTarget::kAttention},
          {LossTerm::kAtt, GradTarget::kAttention}, {LossTerm::kTv, GradTarget::kAttention},
          {LossTerm::kL2, GradTarget::kMapper},     {LossTerm::kTotal, GradTarget::kBoth}};
}

inline std::vector<GradCheckCase> grad_check_suite(const EditCheckSetup& setup, EditModel& model,
                                                   double tolerance = 1e-4,
                                                   const GradCheckOptions& opts = {}) {
  std::vector<GradCheckCase> out;
  std::uint64_t salt = 0;
  for (const auto& [term, target] : default_check_cases()) {
    std::vector<Tensor*> params;
    const Objective f = edit_objective_fn(setup, model, term, target, params);
    GradCheckOptions o = opts;
    o.seed = mix_seed(opts.seed, ++salt);
    GradCheckCase c;
    c.term = term;
    c.target = target;
    c.report = grad_check(f, params, o);
    c.pass = c.report.max_rel_error <= tolerance;
    out.push_back(c);
  }
  return out;
}

/// Freshly initialised edit model whose mapper output layer is randomised so
/// that the edit is not the identity and every term has a nonzero gradient.
inline EditModel warm_edit_model(const Generator& gen, const TrainConfig& cfg, std::uint64_t seed,
                                 double output_scale = 0.05) {
  EditModel model = init_edit_model(gen, cfg, "", seed);
  model.config.mask_mode = MaskMode::kSoft;
  Rng rng(mix_seed(seed, 0x7761726dULL));
  for (MlpParams& net : model.mapper.nets) {
    for (double& v : net.weights[2].values()) v = output_scale * rng.normal();
    for (double& v : net.biases[2].values()) v = output_scale * rng.normal();
  }
  return model;
}

}  // namespace feat
