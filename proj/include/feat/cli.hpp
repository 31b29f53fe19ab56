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

// Command-line front end. run_cli() parses arguments with CLI11, dispatches
// to a subcommand, and maps failures to exit codes:
//
//   0 success, 2 usage or configuration, 3 numeric failure,
//   4 model/generator mismatch, 5 gradient check failure.

#pragma once

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "feat/config.hpp"
#include "feat/error.hpp"
#include "feat/evaluate.hpp"
#include "feat/gradcheck.hpp"
#include "feat/io/model_io.hpp"
#include "feat/io/plot.hpp"
#include "feat/io/png.hpp"
#include "feat/io/tensor_file.hpp"
#include "feat/log.hpp"
#include "feat/trainer.hpp"
#include "feat/version.hpp"

namespace feat::cli {

enum ExitCode : int { kOk = 0, kUsage = 2, kNumeric = 3, kMismatch = 4, kVerification = 5 };

struct CommonOptions {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

namespace detail {

inline RunConfig load_config(const CommonOptions& o) {
  RunConfig c = o.config.empty() ? parse_run_config(nlohmann::json{{"format_version", 1}})
                                 : load_run_config(o.config);
  if (!o.out.empty()) c.output_dir = o.out;
  if (o.seed) c.train.seed = *o.seed;
  return c;
}

inline std::filesystem::path prepare_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output directory '" + dir + "': " + ec.message());
  return std::filesystem::path(dir);
}

inline std::string history_jsonl(const TrainHistory& h) {
  std::string out;
  for (const HistoryEntry& e : h.entries) {
    nlohmann::json j = {{"step", e.step},       {"clip", e.loss.clip}, {"att", e.loss.att},
                        {"tv", e.loss.tv},       {"l2", e.loss.l2},     {"total", e.loss.total},
                        {"mean_mask", e.mean_mask}};
    out += j.dump() + "\n";
  }
  return out;
}

inline void write_loss_plot(const std::string& path, const TrainHistory& h) {
  io::Series total{{}, {}, {200, 30, 30}}, clip{{}, {}, {30, 90, 200}}, mask{{}, {}, {40, 160, 60}};
  for (const HistoryEntry& e : h.entries) {
    for (io::Series* s : {&total, &clip, &mask}) s->x.push_back(static_cast<double>(e.step));
    total.y.push_back(e.loss.total);
    clip.y.push_back(e.loss.clip);
    mask.y.push_back(e.mean_mask);
  }
  io::write_png(path, io::plot_series({total, clip, mask}));
}

inline std::string hash_hex(const std::string& bytes) { return hex64(fnv1a_bytes(bytes)); }

/// Run manifest: everything needed to reproduce the outputs, and hashes of them.
inline std::string run_manifest(const std::string& command, const RunConfig& c, const Generator& gen,
                                const std::vector<std::pair<std::string, std::string>>& outputs) {
  nlohmann::json j;
  j["command"] = command;
  j["feat_version"] = kVersion;
  j["config"] = to_json(c);
  j["config_hash"] = hash_hex(to_json(c).dump());
  j["seeds"] = {{"train", c.train.seed}, {"generator", c.generator.seed}, {"embedder", c.embedder.seed}};
  j["generator_fingerprint"] = hex64(gen.fingerprint());
  nlohmann::json files = nlohmann::json::object();
  for (const auto& [name, bytes] : outputs) files[name] = hash_hex(bytes);
  j["outputs"] = files;
  return j.dump(2) + "\n";
}

inline void write_train_outputs(const std::filesystem::path& dir, const std::string& stem, const RunConfig& c,
                                const Generator& gen, const EditModel& model, const TrainHistory& h,
                                std::vector<std::pair<std::string, std::string>>& outputs) {
  const std::string archive = io::encode_model(model, c.generator);
  const std::string history = history_jsonl(h);
  io::write_file((dir / (stem + ".feat.tar")).string(), archive);
  io::write_file((dir / (stem + "_history.jsonl")).string(), history);
  write_loss_plot((dir / (stem + "_loss.png")).string(), h);
  outputs.push_back({stem + ".feat.tar", archive});
  outputs.push_back({stem + "_history.jsonl", history});
  (void)gen;
}

inline TrainConfig with_checkpoints(TrainConfig tc, const std::filesystem::path& dir, const GeneratorConfig& g) {
  tc.checkpoint = [dir, g](std::size_t, const EditModel& m) {
    io::save_model((dir / "checkpoint.feat.tar").string(), m, g);
  };
  return tc;
}

}  // namespace detail

inline int cmd_train(const CommonOptions& o, std::ostream& out) {
  const RunConfig c = detail::load_config(o);
  const Generator gen(c.generator);
  const auto embedder = make_embedder(c.embedder);
  const auto dir = detail::prepare_dir(c.output_dir);
  const TrainResult r = train_edit_model(c.prompt, *embedder, gen, detail::with_checkpoints(c.train, dir, c.generator));
  std::vector<std::pair<std::string, std::string>> outputs;
  detail::write_train_outputs(dir, "model", c, gen, r.model, r.history, outputs);
  io::write_file((dir / "manifest.json").string(), detail::run_manifest("train", c, gen, outputs));
  out << "trained '" << c.prompt << "' for " << c.train.iterations << " iterations; wrote "
      << (dir / "model.feat.tar").string() << "\n";
  return kOk;
}

inline int cmd_two_step(const CommonOptions& o, std::ostream& out) {
  const RunConfig c = detail::load_config(o);
  if (c.prompt2.empty()) throw ConfigError("two-step: configuration needs 'prompt2'");
  const Generator gen(c.generator);
  const auto embedder = make_embedder(c.embedder);
  const auto dir = detail::prepare_dir(c.output_dir);
  const TwoStepResult r =
      train_two_step(c.prompt, c.prompt2, *embedder, gen, detail::with_checkpoints(c.train, dir, c.generator),
                     c.frozen_mask);
  std::vector<std::pair<std::string, std::string>> outputs;
  detail::write_train_outputs(dir, "step1", c, gen, r.step1, r.history1, outputs);
  detail::write_train_outputs(dir, "step2", c, gen, r.step2, r.history2, outputs);
  const std::string mask = io::encode_tensor(r.frozen.values);
  io::write_file((dir / "frozen_mask.feat").string(), mask);
  io::write_png((dir / "frozen_mask.png").string(), io::mask_raster(r.frozen, true));
  outputs.push_back({"frozen_mask.feat", mask});
  io::write_file((dir / "manifest.json").string(), detail::run_manifest("two-step", c, gen, outputs));
  out << "two-step: '" << c.prompt << "' defines the mask, '" << c.prompt2 << "' the edit; wrote "
      << dir.string() << "\n";
  return kOk;
}

struct EditOptions {
  std::string model;
  std::optional<std::uint64_t> latent_seed;
  std::string latent_file;
  std::string mask_mode;
  std::optional<double> tau;
  bool export_mask = false;
};

inline LatentWPlus latent_from_file(const Generator& gen, const std::string& path) {
  const Tensor t = io::load_tensor(path).tensor;
  const GeneratorConfig& g = gen.config();
  if (t.shape() == Shape{g.z_dim}) {
    return broadcast(gen.map_latent(LatentZ{t.storage()}), g.num_layers);
  }
  if (t.shape() == Shape{g.w_dim}) return broadcast(t.storage(), g.num_layers);
  if (t.shape() == Shape{g.num_layers, g.w_dim}) return LatentWPlus{t};
  throw ConfigError("latent file '" + path + "' has shape " + shape_string(t.shape()) +
                    "; expected (z_dim), (w_dim) or (num_layers, w_dim)");
}

inline int cmd_edit(const CommonOptions& o, const EditOptions& e, std::ostream& out) {
  if (e.model.empty()) throw ConfigError("edit: --model is required");
  if (!std::filesystem::exists(e.model)) throw ConfigError("edit: model archive '" + e.model + "' not found");
  io::LoadedModel loaded;
  try {
    loaded = io::load_model(e.model);
  } catch (const FormatError& ex) {
    throw ConfigError(std::string("edit: ") + ex.what());
  }
  RunConfig c = detail::load_config(o);
  if (o.config.empty()) c.generator = loaded.generator;
  const Generator gen(c.generator);
  EditModel& model = loaded.model;
  if (e.mask_mode == "soft") model.config.mask_mode = MaskMode::kSoft;
  if (e.mask_mode == "hard") model.config.mask_mode = MaskMode::kHard;
  if (e.tau) model.config.tau = *e.tau;
  model.config.validate(gen.num_layers());

  std::uint64_t seed = e.latent_seed.value_or(0);
  const LatentWPlus w = e.latent_file.empty() ? latent_from_seed(gen, seed) : latent_from_file(gen, e.latent_file);
  const EditResult r = edit_image(w, model, gen);
  const auto dir = detail::prepare_dir(c.output_dir);
  io::write_png((dir / "original.png").string(), io::image_raster(r.original));
  io::write_png((dir / "edited.png").string(), io::image_raster(r.edited));
  if (e.export_mask) {
    const bool hard = model.frozen_mask || model.config.mask_mode == MaskMode::kHard;
    io::write_png((dir / (hard ? "mask_hard.png" : "mask_soft.png")).string(), io::mask_raster(r.mask, hard));
    io::save_tensor((dir / "mask.feat").string(), r.mask.values);
  }
  nlohmann::json side;
  side["model"] = std::filesystem::path(e.model).filename().string();
  side["prompt"] = model.prompt;
  if (e.latent_file.empty()) {
    side["latent_seed"] = seed;
  } else {
    side["latent_file"] = e.latent_file;
  }
  side["edit"] = io::edit_config_json(model.config);
  side["generator"] = io::generator_config_json(c.generator);
  side["frozen_mask"] = model.frozen_mask.has_value();
  side["mean_mask"] = r.mask.values.mean();
  io::write_file((dir / "edit.json").string(), side.dump(2) + "\n");
  out << "edited with '" << model.prompt << "'; wrote " << (dir / "edited.png").string() << "\n";
  return kOk;
}

struct EvalOptions {
  std::string model;
  std::optional<std::size_t> num_samples;
};

inline int cmd_eval(const CommonOptions& o, const EvalOptions& e, std::ostream& out) {
  if (e.model.empty()) throw ConfigError("eval: --model is required");
  if (!std::filesystem::exists(e.model)) throw ConfigError("eval: model archive '" + e.model + "' not found");
  io::LoadedModel loaded;
  try {
    loaded = io::load_model(e.model);
  } catch (const FormatError& ex) {
    throw ConfigError(std::string("eval: ") + ex.what());
  }
  RunConfig c = detail::load_config(o);
  if (o.config.empty()) c.generator = loaded.generator;
  const std::size_t n = e.num_samples.value_or(c.eval.num_samples);
  if (n < 2) throw ConfigError("eval: num_samples must be at least 2, got " + std::to_string(n));
  const Generator gen(c.generator);
  const ProjectionEmbedder embedder(c.eval.embedder_dim, gen.config().output_resolution(), c.eval.embedder_seed,
                                    std::min<std::size_t>(8, gen.config().output_resolution()));
  const EvalReport rep = evaluate_model(loaded.model, gen, embedder, n, c.eval.seed);
  const auto dir = detail::prepare_dir(c.output_dir);
  nlohmann::json row = {{"attribute", rep.attribute}, {"fid", rep.fid}, {"cs", rep.cs}, {"ed", rep.ed},
                        {"num_samples", rep.num_samples}, {"pair_identity_residual", rep.pair_identity_residual}};
  io::write_file((dir / "eval.json").string(), row.dump(2) + "\n");
  std::ostringstream csv;
  csv << std::setprecision(17) << "attribute,fid,cs,ed,num_samples\n"
      << '"' << rep.attribute << '"' << ',' << rep.fid << ',' << rep.cs << ',' << rep.ed << ',' << rep.num_samples << "\n";
  io::write_file((dir / "eval.csv").string(), csv.str());
  out << row.dump() << "\n";
  return kOk;
}

struct GradCheckCliOptions {
  /// Test hook: perturbs every analytic gradient before comparison.
  bool corrupt_analytic = false;
};

inline int cmd_gradcheck(const CommonOptions& o, const GradCheckCliOptions& g, std::ostream& out) {
  const RunConfig c = detail::load_config(o);
  const Generator gen(c.generator);
  const auto embedder = make_embedder(c.embedder);
  EditModel model = warm_edit_model(gen, c.train, c.gradcheck.seed, c.gradcheck.warm_scale);
  model.config = c.train.edit;
  EditCheckSetup setup{&gen, embedder.get(), c.prompt, latent_from_seed(gen, c.gradcheck.seed), c.train.weights,
                       c.train.tv_mode};
  GradCheckOptions opts;
  opts.epsilon = c.gradcheck.epsilon;
  opts.num_coords = c.gradcheck.num_coords;
  opts.seed = c.gradcheck.seed;
  opts.denominator_floor = c.gradcheck.denominator_floor;
  if (g.corrupt_analytic) {
    opts.corrupt_analytic = [](std::vector<Tensor>& grads) {
      for (Tensor& t : grads) {
        for (double& v : t.values()) v = 1.5 * v + 1e-3;
      }
    };
  }
  const auto cases = grad_check_suite(setup, model, c.gradcheck.tolerance, opts);
  out << std::left << std::setw(24) << "term/target" << std::setw(16) << "max rel err" << "status\n";
  std::vector<std::string> failing;
  for (const GradCheckCase& k : cases) {
    out << std::left << std::setw(24) << k.name() << std::setw(16) << std::scientific << std::setprecision(3)
        << k.report.max_rel_error << std::defaultfloat << (k.pass ? "ok" : "FAIL") << "\n";
    if (!k.pass) failing.push_back(k.name());
  }
  if (!failing.empty()) {
    std::string msg = "gradient check failed for:";
    for (const auto& f : failing) msg += " " + f;
    log::error(msg);
    out << msg << "\n";
    return kVerification;
  }
  return kOk;
}

/// Entry point shared by the feat binary and the tests.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"feat: text-guided latent editing with learned attention blending"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));
  CommonOptions common;
  auto add_common = [&common](CLI::App* sub) {
    sub->add_option("--config", common.config, "run configuration (JSON)");
    sub->add_option("--out", common.out, "output directory (overrides output_dir)");
    sub->add_option("--seed", common.seed, "training seed (overrides train.seed)");
  };
  CLI::App* train = app.add_subcommand("train", "train an edit model for the configured prompt");
  add_common(train);
  CLI::App* two = app.add_subcommand("two-step", "train a mask with prompt, then an edit with prompt2");
  add_common(two);
  EditOptions edit_opts;
  CLI::App* edit = app.add_subcommand("edit", "apply a trained model to one latent");
  add_common(edit);
  edit->add_option("--model", edit_opts.model, "model archive");
  edit->add_option("--latent-seed", edit_opts.latent_seed, "latent seed");
  edit->add_option("--latent", edit_opts.latent_file, "latent tensor file: (z_dim), (w_dim) or (L, w_dim)");
  edit->add_option("--mask-mode", edit_opts.mask_mode, "soft or hard")->check(CLI::IsMember({"soft", "hard"}));
  edit->add_option("--tau", edit_opts.tau, "hard-mask threshold in [0, 1]");
  edit->add_flag("--export-mask", edit_opts.export_mask, "write the mask as PNG and tensor file");
  EvalOptions eval_opts;
  CLI::App* eval = app.add_subcommand("eval", "Frechet distance and identity metrics of a model");
  add_common(eval);
  eval->add_option("--model", eval_opts.model, "model archive");
  eval->add_option("--num-samples", eval_opts.num_samples, "number of latents");
  GradCheckCliOptions gc_opts;
  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every loss term");
  add_common(gradcheck);
  gradcheck->add_flag("--corrupt-analytic", gc_opts.corrupt_analytic, "testing hook: perturb analytic gradients");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }
  try {
    if (train->parsed()) return cmd_train(common, out);
    if (two->parsed()) return cmd_two_step(common, out);
    if (edit->parsed()) return cmd_edit(common, edit_opts, out);
    if (eval->parsed()) return cmd_eval(common, eval_opts, out);
    if (gradcheck->parsed()) return cmd_gradcheck(common, gc_opts, out);
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const StaleModelError& e) {
    err << "model mismatch: " << e.what() << "\n";
    return kMismatch;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}

}  // namespace feat::cli
