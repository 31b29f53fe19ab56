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

// Acceptance run: one PASS/FAIL line per criterion, exit status 0 iff all
// pass. Tolerances and desk-scale settings are pinned below.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "feat/cli.hpp"
#include "feat/evaluate.hpp"
#include "feat/gradcheck.hpp"
#include "feat/losses.hpp"
#include "feat/metrics.hpp"
#include "feat/trainer.hpp"

namespace feat::acceptance {
namespace {

namespace fs = std::filesystem;

// A1
constexpr double kGradTolerance = 1e-4;
constexpr double kGradSeconds = 120.0;
// A3, A4
constexpr double kUnitTolerance = 1e-12;
constexpr double kFrechetTolerance = 1e-8;
// A5-A7 desk task
constexpr std::size_t kDeskIterations = 1000;
constexpr double kDeskStyleGain = 4000.0;
constexpr double kDeskSharedWeight = 20.0;
constexpr std::uint64_t kDeskSeeds[] = {0, 1, 2};
constexpr std::uint64_t kEvalSetSeed = 999;
constexpr std::size_t kEvalSetSize = 16;
constexpr double kClipReduction = 0.5;
constexpr double kInsideMassBar = 0.50;
constexpr double kNominalInsideMass = 0.60;
constexpr double kOutsideRatio = 2.0;
constexpr double kDeskSeconds = 600.0;
constexpr double kLambdaAtt[] = {0.0005, 0.005, 0.05};
// A8
constexpr std::size_t kStep2Iterations = 100;
constexpr double kStep2Tau = 0.3;  // 0.8 leaves the desk-scale hard mask empty
// A10
constexpr std::size_t kEvalSamples = 256;
constexpr double kFidBound = 1e-6;
constexpr double kIdentityTolerance = 1e-9;

int failures = 0;

void report(const std::string& id, bool pass, const std::string& detail) {
  std::cout << id << ' ' << (pass ? "PASS" : "FAIL") << "  " << detail << std::endl;
  if (!pass) ++failures;
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

RunConfig default_config() { return parse_run_config(nlohmann::json{{"format_version", 1}}); }

// -- A1 ------------------------------------------------------------------------

void gradient_fidelity() {
  const auto t0 = std::chrono::steady_clock::now();
  const RunConfig c = default_config();
  const Generator gen(c.generator);
  const auto embedder = make_embedder(c.embedder);
  EditModel model = warm_edit_model(gen, c.train, c.gradcheck.seed, c.gradcheck.warm_scale);
  model.config = c.train.edit;
  const EditCheckSetup setup{&gen, embedder.get(), c.prompt, latent_from_seed(gen, c.gradcheck.seed),
                             c.train.weights, c.train.tv_mode};
  GradCheckOptions opts;
  opts.epsilon = c.gradcheck.epsilon;
  opts.num_coords = c.gradcheck.num_coords;
  opts.seed = c.gradcheck.seed;
  opts.denominator_floor = c.gradcheck.denominator_floor;
  bool ok = true;
  std::string detail = "L=" + std::to_string(gen.num_layers()) + " res=" +
                       std::to_string(gen.config().output_resolution()) +
                       " w_dim=" + std::to_string(gen.config().w_dim) + ";";
  for (const GradCheckCase& k : grad_check_suite(setup, model, kGradTolerance, opts)) {
    ok = ok && k.pass;
    detail += " " + k.name() + "=" + fmt(k.report.max_rel_error);
  }
  const double secs = seconds_since(t0);
  report("A1", ok && secs < kGradSeconds, detail + "; " + fmt(secs) + " s (bound " + fmt(kGradTolerance) + ")");
}

// -- A2 ------------------------------------------------------------------------

void blending_identities() {
  const RunConfig c = default_config();
  const Generator gen(c.generator);
  TrainConfig tc = c.train;
  tc.init.mapper_hidden = 64;
  std::size_t checks = 0, broken = 0;
  auto expect = [&](bool same) {
    ++checks;
    broken += same ? 0 : 1;
  };
  for (std::size_t i : {5u, 8u}) {
    tc.edit.blend_layer = i;
    tc.edit.scope = EditScope::first(i);
    const std::size_t r = gen.config().resolution(i);
    const EditModel mapped = warm_edit_model(gen, tc, 7, 1.0);
    const EditModel zero = init_edit_model(gen, tc, "red", 7);
    for (std::uint64_t s = 0; s < 3; ++s) {
      const LatentWPlus w = latent_from_seed(gen, 100 + s);
      EditModel m0 = mapped;
      m0.frozen_mask = AttentionMask::constant(r, r, 0.0);
      const EditResult e0 = edit_image(w, m0, gen);
      expect(e0.edited.pixels == e0.original.pixels);

      EditModel m1 = mapped;
      m1.frozen_mask = AttentionMask::constant(r, r, 1.0);
      const EditResult e1 = edit_image(w, m1, gen);
      expect(e1.edited.pixels == gen.synthesize(e1.edited_codes).first.pixels);
      expect(!(e1.edited.pixels == e1.original.pixels));

      Rng rng(mix_seed(s, i));
      AttentionMask random{Tensor(Shape{1, r, r})};
      for (double& v : random.values.values()) v = rng.uniform();
      for (int variant = 0; variant < 4; ++variant) {
        EditModel z = zero;
        if (variant == 0) z.config.mask_mode = MaskMode::kSoft;
        if (variant == 1) z.config.mask_mode = MaskMode::kHard;
        if (variant == 2) z.frozen_mask = random;
        if (variant == 3) z.config.mute_attention = true;
        const EditResult ez = edit_image(w, z, gen);
        expect(ez.edited.pixels == ez.original.pixels);
      }
    }
  }
  report("A2", broken == 0,
         std::to_string(checks - broken) + "/" + std::to_string(checks) +
             " exact identities (m=0, m=1 with full scope, zero mapper under soft/hard/random/unit masks)");
}

// -- A3 ------------------------------------------------------------------------

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

void loss_unit_values() {
  double worst = 0.0;
  auto check = [&](double got, double want) { worst = std::max(worst, std::abs(got - want)); };
  auto mask = [](std::vector<double> v) { return AttentionMask{Tensor(Shape{1, 2, 2}, std::move(v))}; };
  const ImageTensor img{Tensor(Shape{3, 2, 2}, 0.0)};
  check(clip_loss(img, "t", FixedEmbedder({0.6, 0.8}, {0.6, 0.8})), 0.0);
  check(clip_loss(img, "t", FixedEmbedder({1.0, 0.0}, {0.0, 1.0})), 1.0);
  check(clip_loss(img, "t", FixedEmbedder({1.0, 0.0}, {-1.0, 0.0})), 2.0);
  check(att_loss(mask({1, 0, 0, 0})), 0.25);
  check(att_loss(AttentionMask::constant(3, 5, 0.37)), 0.37);
  check(att_loss(AttentionMask::constant(4, 4, 1.0)), 1.0);
  check(tv_loss(AttentionMask::constant(4, 4, 0.6)), 0.0);
  check(tv_loss(mask({0, 1, 0, 1})), 2.0);
  check(tv_loss(mask({0, 1, 1, 0})), 4.0);
  Tensor w(Shape{3, 2}, std::vector<double>{1, 2, 3, 4, 5, 6});
  check(latent_loss(LatentWPlus{w}, LatentWPlus{w}), 0.0);
  Tensor one = w;
  one[2] += 0.1 * 3.0;
  one[3] += 0.1 * 4.0;
  check(latent_loss(LatentWPlus{w}, LatentWPlus{one}), 0.1 * 5.0);
  Tensor two = w;
  two[0] += 3.0;
  two[1] += 4.0;
  two[4] -= 4.0;
  two[5] += 3.0;
  check(latent_loss(LatentWPlus{w}, LatentWPlus{two}), std::sqrt(50.0));
  check(total_loss(LossParts{1, 1, 1, 1}, LossWeights{}).total, 1.80501);
  check(total_loss(LossParts{0.3, 0.7, 0.2, 0.9}, LossWeights{0, 0, 0}).total, 0.3);
  check(total_loss(LossParts{0, 0, 0, 0}, LossWeights{}).total, 0.0);
  report("A3", worst <= kUnitTolerance, "max |error| " + fmt(worst) + " over 15 unit values (bound " +
                                             fmt(kUnitTolerance) + ")");
}

// -- A4 ------------------------------------------------------------------------

void frechet_closed_forms() {
  double worst = 0.0;
  Rng rng(4);
  Eigen::MatrixXd a(5, 5);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = rng.normal();
  const Eigen::MatrixXd cov = a * a.transpose() + Eigen::MatrixXd::Identity(5, 5);
  Eigen::VectorXd mu(5);
  for (Eigen::Index i = 0; i < 5; ++i) mu[i] = rng.normal();
  worst = std::max(worst, std::abs(frechet_distance(Gaussian{mu, cov}, Gaussian{mu, cov})));

  Eigen::VectorXd m1 = Eigen::VectorXd::Zero(4), m2 = Eigen::VectorXd::Zero(4);
  m2[1] = 2.0;
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(4, 4);
  worst = std::max(worst, std::abs(frechet_distance(Gaussian{m1, id}, Gaussian{m2, id}) - 4.0));

  for (const auto& [u1, v1, u2, v2] : {std::array<double, 4>{0.5, 2.0, -1.0, 0.3}, {3.0, 9.0, 3.0, 1.0}}) {
    const double want = (u1 - u2) * (u1 - u2) + std::pow(std::sqrt(v1) - std::sqrt(v2), 2);
    const double got = frechet_distance(Gaussian{Eigen::VectorXd::Constant(1, u1), Eigen::MatrixXd::Constant(1, 1, v1)},
                                        Gaussian{Eigen::VectorXd::Constant(1, u2), Eigen::MatrixXd::Constant(1, 1, v2)});
    worst = std::max(worst, std::abs(got - want));
  }
  report("A4", worst <= kFrechetTolerance, "max |error| " + fmt(worst) + " (bound " + fmt(kFrechetTolerance) + ")");
}

// -- A5-A8 desk task -------------------------------------------------------------

GeneratorConfig desk_generator() {
  GeneratorConfig g;
  g.channels = {32, 32, 32, 32, 24, 24, 16, 16};
  g.style_gain = kDeskStyleGain;
  return g;
}

RegionStatEmbedder desk_embedder() {
  RegionStatEmbedder e(16, 32, Region{0, 0, 16, 16}, 3, kDeskSharedWeight);
  e.add_color_token("red", {1.0, -1.0, -1.0});
  e.add_color_token("blue", {-1.0, -1.0, 1.0});
  return e;
}

TrainConfig desk_train(std::uint64_t seed, double lambda_att, bool mute) {
  TrainConfig tc;
  tc.iterations = kDeskIterations;
  tc.log_every = 250;
  tc.seed = seed;
  tc.weights.lambda_att = lambda_att;
  tc.edit.blend_layer = 8;
  tc.edit.scope = EditScope::first(8);
  tc.edit.mute_attention = mute;
  return tc;
}

struct DeskStats {
  double clip = 0.0;
  double inside = 0.0;          // soft-mask mass inside the quadrant
  double outside_change = 0.0;  // mean |pixel change| outside the quadrant
  double mean_mask = 0.0;
};

/// Soft-mask edits of a fixed evaluation set, averaged.
DeskStats measure(const EditModel& trained, const Generator& gen, const JointEmbedder& emb) {
  EditModel m = trained;
  m.config.mask_mode = MaskMode::kSoft;
  DeskStats s;
  const auto set = sample_wplus_batch(gen, kEvalSetSeed, kEvalSetSize);
  const std::size_t res = gen.config().output_resolution(), half = res / 2;
  for (const LatentWPlus& w : set) {
    const EditResult r = edit_image(w, m, gen);
    s.clip += clip_loss(r.edited, m.prompt, emb);
    const Tensor& mk = r.mask.values;
    double in = 0.0, total = 0.0;
    for (std::size_t y = 0; y < mk.dim(1); ++y) {
      for (std::size_t x = 0; x < mk.dim(2); ++x) {
        total += mk.at(0, y, x);
        if (y < mk.dim(1) / 2 && x < mk.dim(2) / 2) in += mk.at(0, y, x);
      }
    }
    s.inside += in / total;
    s.mean_mask += mk.mean();
    double change = 0.0;
    std::size_t n = 0;
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t y = 0; y < res; ++y) {
        for (std::size_t x = 0; x < res; ++x) {
          if (y < half && x < half) continue;
          change += std::abs(r.edited.pixels.at(c, y, x) - r.original.pixels.at(c, y, x));
          ++n;
        }
      }
    }
    s.outside_change += change / static_cast<double>(n);
  }
  const double k = static_cast<double>(set.size());
  s.clip /= k;
  s.inside /= k;
  s.outside_change /= k;
  s.mean_mask /= k;
  return s;
}

struct DeskRun {
  EditModel model;
  DeskStats stats;
};

DeskRun desk_run(const Generator& gen, const JointEmbedder& emb, std::uint64_t seed, double lambda_att, bool mute) {
  TrainResult r = train_edit_model("red", emb, gen, desk_train(seed, lambda_att, mute));
  DeskStats s = measure(r.model, gen, emb);
  std::cout << "  run seed=" << seed << " lambda_att=" << lambda_att << (mute ? " muted" : "")
            << ": clip=" << fmt(s.clip) << " inside=" << fmt(s.inside) << " outside_change=" << fmt(s.outside_change)
            << " mean_mask=" << fmt(s.mean_mask) << std::endl;
  return DeskRun{std::move(r.model), s};
}

void desk_task() {
  const Generator gen(desk_generator());
  const RegionStatEmbedder emb = desk_embedder();
  const TrainConfig base = desk_train(0, LossWeights{}.lambda_att, false);
  const double initial_clip = measure(init_edit_model(gen, base, "red", 0), gen, emb).clip;

  // A5: default loss weights, three seeds.
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<DeskRun> att;
  for (std::uint64_t s : kDeskSeeds) att.push_back(desk_run(gen, emb, s, LossWeights{}.lambda_att, false));
  const double a5_secs = seconds_since(t0);
  double reduction = 0.0, inside = 0.0, att_outside = 0.0;
  for (const DeskRun& r : att) {
    reduction += (1.0 - r.stats.clip / initial_clip) / 3.0;
    inside += r.stats.inside / 3.0;
    att_outside += r.stats.outside_change / 3.0;
  }
  report("A5", reduction >= kClipReduction && inside >= kInsideMassBar && a5_secs < kDeskSeconds,
         "clip " + fmt(initial_clip) + " -> reduced by " + fmt(100 * reduction) + "% (bar " +
             fmt(100 * kClipReduction) + "%); inside-quadrant mask mass " + fmt(inside) + " (calibrated bar " +
             fmt(kInsideMassBar) + ", nominal " + fmt(kNominalInsideMass) + " " +
             (inside >= kNominalInsideMass ? "met" : "not met") + ", chance 0.25); " + fmt(a5_secs) + " s");

  // A6: attention muted.
  double mute_outside = 0.0;
  for (std::uint64_t s : kDeskSeeds) mute_outside += desk_run(gen, emb, s, LossWeights{}.lambda_att, true).stats.outside_change / 3.0;
  const double ratio = mute_outside / att_outside;
  report("A6", ratio >= kOutsideRatio,
         "outside-quadrant change muted " + fmt(mute_outside) + " vs attention " + fmt(att_outside) + ", ratio " +
             fmt(ratio) + " (bar " + fmt(kOutsideRatio) + ")");

  // A7: mean mask across lambda_att.
  std::vector<double> means;
  for (double l : kLambdaAtt) {
    double mean = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
      mean += (l == LossWeights{}.lambda_att ? att[k].stats.mean_mask
                                              : desk_run(gen, emb, kDeskSeeds[k], l, false).stats.mean_mask) /
              3.0;
    }
    means.push_back(mean);
  }
  report("A7", means[1] <= means[0] && means[2] <= means[1],
         "mean mask " + fmt(means[0]) + " >= " + fmt(means[1]) + " >= " + fmt(means[2]) +
             " for lambda_att 0.0005, 0.005, 0.05");

  // A8: step 2 with the seed-0 attention frozen.
  TrainConfig tc = desk_train(0, LossWeights{}.lambda_att, false);
  tc.iterations = kStep2Iterations;
  tc.edit.tau = kStep2Tau;
  std::size_t zero_positions = 0, one_positions = 0, mismatches = 0, non_binary = 0;
  tc.observer = [&](const StepProbe& p) {
    const Tensor& m = p.pass->mask.value();
    const Tensor& orig = p.pass->original.states[tc.edit.blend_layer - 1].features.value();
    const Tensor& blended = p.pass->blended_state.features.value();
    for (std::size_t y = 0; y < m.dim(1); ++y) {
      for (std::size_t x = 0; x < m.dim(2); ++x) {
        const double v = m.at(0, y, x);
        if (v != 0.0 && v != 1.0) ++non_binary;
        if (v != 0.0) {
          ++one_positions;
          continue;
        }
        ++zero_positions;
        for (std::size_t c = 0; c < orig.dim(0); ++c) mismatches += blended.at(c, y, x) == orig.at(c, y, x) ? 0 : 1;
      }
    }
  };
  const TrainResult s2 = train_with_frozen_attention("blue", emb, gen, tc, att[0].model);
  bool frozen = true;
  const auto a1 = att[0].model.attention.tensors();
  const auto a2 = s2.model.attention.tensors();
  for (std::size_t k = 0; k < a1.size(); ++k) frozen = frozen && *a1[k] == *a2[k];
  report("A8", mismatches == 0 && non_binary == 0 && frozen && zero_positions > 0 && one_positions > 0,
         std::to_string(zero_positions) + " mask=0 positions (" + std::to_string(one_positions) +
             " mask=1, tau " + fmt(kStep2Tau) + ") over " + std::to_string(kStep2Iterations) + " steps, " + std::to_string(mismatches) +
             " feature mismatches; attention " + (frozen ? "unchanged" : "CHANGED"));
}

// -- A9, A10 -------------------------------------------------------------------

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "feat");
  std::vector<const char*> argv;
  for (const std::string& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  if (code != 0) std::cout << "  feat " << args[1] << " exited " << code << ": " << err.str();
  return code;
}

void determinism(const fs::path& dir) {
  nlohmann::json j = {{"format_version", 1},
                      {"generator", {{"channels", {32, 32, 32, 32, 24, 24, 16, 16}}}},
                      {"train", {{"iterations", 40}, {"log_every", 10}, {"seed", 11}, {"mapper_hidden", 64}}}};
  const std::string cfg = (dir / "a9.json").string();
  io::write_file(cfg, j.dump());
  const std::string out = (dir / "a9").string();
  bool ok = cli({"train", "--config", cfg, "--out", out}) == 0;
  const std::string archive = io::read_file(out + "/model.feat.tar");
  const std::string manifest = io::read_file(out + "/manifest.json");
  fs::remove_all(out);
  ok = cli({"train", "--config", cfg, "--out", out}) == 0 && ok;
  const bool same_archive = io::read_file(out + "/model.feat.tar") == archive;
  const bool same_manifest = io::read_file(out + "/manifest.json") == manifest;
  report("A9", ok && same_archive && same_manifest,
         std::string("archive ") + (same_archive ? "identical" : "DIFFERS") + " (" + std::to_string(archive.size()) +
             " bytes), manifest " + (same_manifest ? "identical" : "DIFFERS"));
}

void metric_sanity(const fs::path& dir) {
  const std::string cfg = (dir / "a10.json").string();
  io::write_file(cfg, nlohmann::json{{"format_version", 1}, {"train", {{"iterations", 0}}}}.dump());
  const std::string out = (dir / "a10").string();
  bool ok = cli({"train", "--config", cfg, "--out", out}) == 0;
  ok = cli({"eval", "--config", cfg, "--model", out + "/model.feat.tar", "--num-samples",
            std::to_string(kEvalSamples), "--out", out}) == 0 &&
       ok;
  const auto j = nlohmann::json::parse(io::read_file(out + "/eval.json"));
  const double fid = j["fid"], cs = j["cs"], ed = j["ed"], residual = j["pair_identity_residual"];
  report("A10",
         ok && j["num_samples"] == kEvalSamples && std::abs(fid) <= kFidBound && cs >= 1.0 - kIdentityTolerance &&
             ed <= kIdentityTolerance && residual <= kIdentityTolerance,
         "fid " + fmt(fid) + ", cs " + fmt(cs) + ", ed " + fmt(ed) + ", max pairwise |ED^2 - (2 - 2 CS)| " +
             fmt(residual) + " over " + std::to_string(kEvalSamples) + " samples");
}

}  // namespace
}  // namespace feat::acceptance

int main() {
  using namespace feat::acceptance;
  feat::log::current_level() = feat::log::Level::kWarn;
  const fs::path dir = fs::temp_directory_path() / "feat_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::vector<std::pair<const char*, std::function<void()>>> criteria = {
      {"A1", gradient_fidelity},       {"A2", blending_identities}, {"A3", loss_unit_values},
      {"A4", frechet_closed_forms},    {"A9", [&] { determinism(dir); }}, {"A10", [&] { metric_sanity(dir); }},
      {"A5-A8", desk_task}};
  for (const auto& [id, run] : criteria) {
    try {
      run();
    } catch (const std::exception& e) {
      report(id, false, std::string("threw: ") + e.what());
    }
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
