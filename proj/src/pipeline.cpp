// SPDX-License-Identifier: Apache-2.0
#include "dkto/pipeline.hpp"

#include <chrono>
#include <ctime>

#include "dkto/errors.hpp"
#include "dkto/rng.hpp"

namespace dkto {

SyntheticSuite build_suite(const RunConfig& cfg) { return make_synthetic_suite(cfg.seed, cfg.suite); }

std::vector<LabeledSample> alignment_data(const RunConfig& cfg, const SyntheticSuite& suite) {
  if (cfg.feedback == Feedback::direct) return suite.labeled();
  const auto table = suite_sample_table(suite);
  const ReferenceSpec ref = cfg.reference();
  Rng rng = make_rng(cfg.seed, "data/pairs");
  const auto pairs = label_pairs(
      table, cfg.pair_count, [&](const Point& x) { return desirable_score(x, ref.mu_d, ref.mu_u, ref.var); }, rng);
  const auto feedback =
      cfg.feedback == Feedback::at_least_once ? partition_at_least_once(pairs) : partition_win_only(pairs);
  return to_labeled(feedback, table);
}

DenoiserModel init_model(const RunConfig& cfg) {
  Rng rng = make_rng(cfg.seed, "init");
  return make_denoiser(cfg.arch, cfg.schedule, rng);
}

std::vector<double> run_pretrain(DenoiserModel& model, const RunConfig& cfg, const SyntheticSuite& suite) {
  Rng rng = make_rng(cfg.seed, "train/pretrain");
  return pretrain(model, suite.pretrain, cfg.pretrain, rng);
}

TrainLog run_align(DenoiserModel& theta, const DenoiserModel& ref, const RunConfig& cfg,
                   const std::vector<LabeledSample>& data) {
  AlignmentConfig a = cfg.align;
  a.utility = cfg.choice.utility;
  a.seed = derive_seed(cfg.seed, "train/align");
  return align_train(theta, ref, data, a, cfg.choice.objective);
}

Cond resolve_cond(const std::string& name, const DenoiserModel& model) {
  if (name == "auto") return model.has_cond() ? Cond::good : Cond::none;
  if (name == "none") return Cond::none;
  if (name == "good" || name == "bad") {
    if (!model.has_cond()) throw ConfigError("condition '" + name + "' needs a model with a condition table");
    return name == "good" ? Cond::good : Cond::bad;
  }
  throw UsageError("unknown condition '" + name + "'");
}

Cloud run_sample(const DenoiserModel& model, const RunConfig& cfg) {
  return sample(model, cfg.sample_n, derive_seed(cfg.seed, "sample"), resolve_cond(cfg.sample_cond, model));
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

RunManifest::RunManifest(std::string cmd, const ConfigValues& values, const RunConfig& cfg)
    : command(std::move(cmd)),
      config_snapshot(values.snapshot()),
      config_hash(values.hash()),
      config(values.to_json()),
      seed(cfg.seed),
      started(utc_timestamp()) {}

void RunManifest::add_output(std::string name, std::filesystem::path path) {
  outputs.emplace_back(std::move(name), std::move(path));
}

nlohmann::json RunManifest::to_json() const {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& [name, path] : outputs) out[name] = path.string();
  return {{"format", "dkto-run-manifest"},
          {"version", 1},
          {"command", command},
          {"status", status},
          {"seed", seed},
          {"started", started},
          {"finished", finished},
          {"config_hash", config_hash},
          {"config_snapshot", config_snapshot},
          {"config", config},
          {"outputs", out},
          {"metrics", metrics},
          {"diagnostics", diagnostics},
          {"determinism",
           {{"same_platform", "bit-identical for identical seed and config"},
            {"cross_platform_relative_tolerance", 1e-10},
            {"cross_platform_asserted", false}}}};
}

void write_manifest(const std::filesystem::path& path, RunManifest& manifest) {
  manifest.finished = utc_timestamp();
  for (const auto& [name, file] : manifest.outputs)
    if (!std::filesystem::exists(file)) throw IoError("manifest output '" + name + "' missing: " + file.string());
  write_text_file(path, manifest.to_json().dump(2) + "\n");
}

}  // namespace dkto
