// SPDX-License-Identifier: Apache-2.0
//
// dkto: pretrain / align / sample / eval / ablate / utility-table.
//
// Exit codes: 0 ok, 2 usage or configuration error, 3 numerical divergence,
// 4 I/O or malformed input file.

#include <filesystem>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dkto/checkpoint.hpp"
#include "dkto/config.hpp"
#include "dkto/csv.hpp"
#include "dkto/errors.hpp"
#include "dkto/pipeline.hpp"

namespace fs = std::filesystem;
using namespace dkto;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitDiverged = 3;
constexpr int kExitIo = 4;

struct CommonArgs {
  std::string config;
  std::optional<long long> seed;
  std::string out;
  std::map<std::string, std::string> overrides;
};

void add_common(CLI::App* cmd, CommonArgs& args, const std::string& out_help) {
  cmd->add_option("--config", args.config, "config file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", args.seed, "run seed (same as --run.seed)");
  cmd->add_option("--out", args.out, out_help)->required();
  for (const auto& spec : config_schema()) {
    cmd->add_option_function<std::string>(
           "--" + spec.key, [&args, key = spec.key](const std::string& v) { args.overrides[key] = v; },
           spec.help + " [" + spec.default_value + "]")
        ->group("Config keys");
  }
}

ConfigValues load_config(const CommonArgs& args) {
  ConfigValues values;
  if (!args.config.empty()) apply_config_file(values, args.config);
  apply_env(values);
  for (const auto& [key, value] : args.overrides) values.set(key, value, "--" + key);
  if (args.seed) values.set("run.seed", std::to_string(*args.seed), "--seed");
  return values;
}

void log(const std::string& msg) { std::cerr << "[dkto] " << msg << '\n'; }

nlohmann::json moments(const Cloud& cloud) {
  if (cloud.empty()) return nullptr;
  const ReferenceSpec any;
  return to_json(eval_cloud(cloud, any));
}

std::string loss_csv(const std::vector<double>& losses) {
  std::string out = "step,loss\n";
  for (std::size_t i = 0; i < losses.size(); ++i)
    out += std::to_string(i + 1) + ',' + csv::format_double(losses[i]) + '\n';
  return out;
}

int cmd_pretrain(const CommonArgs& args) {
  const ConfigValues values = load_config(args);
  const RunConfig cfg = resolve(values);
  const fs::path dir = args.out;
  fs::create_directories(dir);
  RunManifest manifest("pretrain", values, cfg);

  const SyntheticSuite suite = build_suite(cfg);
  DenoiserModel model = init_model(cfg);
  log("pretraining " + std::to_string(cfg.pretrain.steps) + " steps");
  std::vector<double> losses;
  int code = kExitOk;
  try {
    losses = run_pretrain(model, cfg, suite);
  } catch (const NumericalError& e) {
    manifest.status = "diverged";
    manifest.diagnostics = e.what();
    code = kExitDiverged;
  }
  const auto ckpt = dir / (code == kExitOk ? "pretrained.json" : "pretrained_last_finite.json");
  save_checkpoint(ckpt, model, {cfg.seed, static_cast<std::int64_t>(losses.size())});
  manifest.add_output("checkpoint", ckpt);
  write_text_file(dir / "pretrain_loss.csv", loss_csv(losses));
  manifest.add_output("loss_log", dir / "pretrain_loss.csv");
  if (code == kExitOk) {
    const Cloud cloud = run_sample(model, cfg);
    write_points_csv(dir / "samples.csv", cloud);
    manifest.add_output("samples", dir / "samples.csv");
    manifest.metrics["samples"] = moments(cloud);
    if (!losses.empty()) {
      const std::size_t tail = std::min<std::size_t>(1000, losses.size());
      manifest.metrics["final_loss_mean_last_1000"] =
          std::accumulate(losses.end() - static_cast<long>(tail), losses.end(), 0.0) / static_cast<double>(tail);
    }
  }
  write_manifest(dir / "manifest.json", manifest);
  if (code != kExitOk) log("diverged: " + manifest.diagnostics);
  return code;
}

// Aligns, samples and evaluates one configuration into `dir`. Returns the
// report on success; throws DivergenceError after writing the partial run.
MetricsReport align_run(const ConfigValues& values, const DenoiserModel& ref, const fs::path& dir,
                        const std::string& command) {
  const RunConfig cfg = resolve(values);
  fs::create_directories(dir);
  RunManifest manifest(command, values, cfg);
  const SyntheticSuite suite = build_suite(cfg);
  const auto data = alignment_data(cfg, suite);

  DenoiserModel theta = ref;
  log("aligning objective " + cfg.objective + " for " + std::to_string(cfg.align.steps) + " steps");
  try {
    const TrainLog tl = run_align(theta, ref, cfg, data);
    if (cfg.choice.objective == Objective::sft && tl.undesirable_consumed != 0)
      throw NumericalError("sft consumed undesirable samples");
    write_train_log_csv(tl, (dir / "train_log.csv").string());
    manifest.add_output("train_log", dir / "train_log.csv");
    manifest.metrics["desirable_consumed"] = tl.desirable_consumed;
    manifest.metrics["undesirable_consumed"] = tl.undesirable_consumed;
    manifest.metrics["ref_checksum_before"] = tl.ref_checksum_before;
    manifest.metrics["ref_checksum_after"] = tl.ref_checksum_after;
  } catch (const DivergenceError& e) {
    write_train_log_csv(e.log, (dir / "train_log.csv").string());
    save_checkpoint(dir / "aligned_last_finite.json", theta, {cfg.seed, static_cast<std::int64_t>(e.log.rows.size())});
    manifest.add_output("train_log", dir / "train_log.csv");
    manifest.add_output("checkpoint", dir / "aligned_last_finite.json");
    manifest.status = "diverged";
    manifest.diagnostics = e.what();
    write_manifest(dir / "manifest.json", manifest);
    throw;
  }
  save_checkpoint(dir / "aligned.json", theta, {cfg.seed, cfg.align.steps});
  manifest.add_output("checkpoint", dir / "aligned.json");

  const Cloud cloud = run_sample(theta, cfg);
  write_points_csv(dir / "samples.csv", cloud);
  manifest.add_output("samples", dir / "samples.csv");
  if (cloud.empty()) {
    manifest.diagnostics = "sample.n = 0; no report";
    write_manifest(dir / "manifest.json", manifest);
    throw UsageError("cannot evaluate an empty cloud (sample.n = 0)");
  }
  const MetricsReport report = eval_cloud(cloud, cfg.reference());
  write_report_json(dir / "report.json", report);
  manifest.add_output("report", dir / "report.json");
  manifest.metrics["report"] = to_json(report);
  write_manifest(dir / "manifest.json", manifest);
  return report;
}

int cmd_align(const CommonArgs& args, const std::string& ckpt, const std::string& objective) {
  ConfigValues values = load_config(args);
  if (!objective.empty()) values.set("align.objective", objective, "--objective");
  resolve(values);
  const DenoiserModel ref = load_checkpoint(ckpt).model;
  try {
    align_run(values, ref, args.out, "align");
  } catch (const DivergenceError& e) {
    log(std::string("diverged: ") + e.what());
    return kExitDiverged;
  }
  return kExitOk;
}

int cmd_sample(const CommonArgs& args, const std::string& ckpt) {
  const ConfigValues values = load_config(args);
  const RunConfig cfg = resolve(values);
  const DenoiserModel model = load_checkpoint(ckpt).model;
  write_points_csv(args.out, run_sample(model, cfg));
  return kExitOk;
}

int cmd_eval(const CommonArgs& args, const std::string& cloud_path) {
  const RunConfig cfg = resolve(load_config(args));
  write_report_json(args.out, eval_cloud(read_points_csv(cloud_path), cfg.reference()));
  return kExitOk;
}

const std::map<std::string, std::string>& axis_keys() {
  static const std::map<std::string, std::string> keys = {{"utility", "align.utility"},
                                                          {"gamma", "align.gamma"},
                                                          {"beta", "align.beta"},
                                                          {"partition", "data.feedback"},
                                                          {"objective", "align.objective"}};
  return keys;
}

int cmd_ablate(const CommonArgs& args, const std::string& axis, const std::vector<std::string>& axis_values,
               const std::string& ckpt) {
  if (!axis_keys().count(axis)) throw UsageError("unknown ablation axis '" + axis + "'");
  if (axis_values.empty()) throw UsageError("ablation needs at least one value");
  const ConfigValues base = load_config(args);
  const RunConfig base_cfg = resolve(base);
  const fs::path dir = args.out;
  fs::create_directories(dir);

  // Validate every value before any training starts.
  std::vector<ConfigValues> runs;
  for (const auto& v : axis_values) {
    ConfigValues values = base;
    if (axis == "utility") values.set("align.objective", "kto", "--axis utility");
    values.set(axis_keys().at(axis), v, "--values");
    resolve(values);
    runs.push_back(values);
  }

  RunManifest manifest("ablate", base, base_cfg);
  DenoiserModel ref;
  if (!ckpt.empty()) {
    ref = load_checkpoint(ckpt).model;
  } else {
    log("no --ckpt given; pretraining a shared reference");
    ref = init_model(base_cfg);
    run_pretrain(ref, base_cfg, build_suite(base_cfg));
    save_checkpoint(dir / "pretrained.json", ref, {base_cfg.seed, base_cfg.pretrain.steps});
    manifest.add_output("pretrained", dir / "pretrained.json");
  }

  std::vector<TaggedReport> reports;
  std::vector<NamedCloud> clouds;
  nlohmann::json per_run = nlohmann::json::array();
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const std::string tag = axis + "=" + axis_values[i];
    const fs::path run_dir = dir / tag;
    TaggedReport tr{tag, std::nullopt, ""};
    try {
      tr.report = align_run(runs[i], ref, run_dir, "ablate/" + tag);
      clouds.push_back({tag, read_points_csv(run_dir / "samples.csv")});
    } catch (const std::exception& e) {
      tr.error = e.what();
      log(tag + " failed: " + tr.error);
    }
    if (fs::exists(run_dir / "manifest.json")) manifest.add_output(tag, run_dir / "manifest.json");
    per_run.push_back({{"tag", tag},
                       {"value", axis_values[i]},
                       {"config_hash", runs[i].hash()},
                       {"status", tr.report ? "ok" : "failed"},
                       {"error", tr.error}});
    reports.push_back(std::move(tr));
  }
  if (reports.size() >= 2) {
    compare_runs(reports, dir / "ranking.csv");
    manifest.add_output("ranking", dir / "ranking.csv");
  }
  if (!clouds.empty()) {
    emit_scatter(clouds, base_cfg.reference(), dir / "scatter.svg");
    manifest.add_output("scatter", dir / "scatter.svg");
  }
  manifest.metrics["axis"] = axis;
  manifest.metrics["runs"] = per_run;
  write_manifest(dir / "manifest.json", manifest);
  return kExitOk;
}

int cmd_utility_table(const std::string& out, double lo, double hi, double step) {
  write_text_file(out, utility_table_csv(utility_table(lo, hi, step)));
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diffusion alignment from binary feedback on a 2D toy suite"};
  app.require_subcommand(1);

  CommonArgs pre_args, align_args, sample_args, eval_args, ablate_args;
  auto* pre = app.add_subcommand("pretrain", "pretrain the reference denoiser");
  add_common(pre, pre_args, "output directory");

  std::string align_ckpt, objective;
  auto* align = app.add_subcommand("align", "fine-tune a pretrained checkpoint");
  add_common(align, align_args, "output directory");
  align->add_option("--ckpt", align_ckpt, "pretrained checkpoint")->required()->check(CLI::ExistingFile);
  align->add_option("--objective", objective, "same as --align.objective");

  std::string sample_ckpt;
  auto* smp = app.add_subcommand("sample", "sample a point cloud");
  add_common(smp, sample_args, "output CSV");
  smp->add_option("--ckpt", sample_ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
  smp->add_option_function<std::string>(
      "--n", [&](const std::string& v) { sample_args.overrides["sample.n"] = v; }, "same as --sample.n");
  smp->add_option_function<std::string>(
      "--cond", [&](const std::string& v) { sample_args.overrides["sample.cond"] = v; }, "same as --sample.cond");

  std::string cloud;
  auto* ev = app.add_subcommand("eval", "score a point cloud");
  add_common(ev, eval_args, "output JSON report");
  ev->add_option("--cloud", cloud, "points CSV")->required()->check(CLI::ExistingFile);

  std::string axis, ablate_ckpt;
  std::vector<std::string> axis_values;
  auto* abl = app.add_subcommand("ablate", "one aligned run per value plus a ranking");
  add_common(abl, ablate_args, "output directory");
  abl->add_option("--axis", axis, "utility | gamma | beta | partition | objective")->required();
  abl->add_option("--values", axis_values, "comma-separated values")->delimiter(',');
  abl->add_option("--ckpt", ablate_ckpt, "pretrained checkpoint (pretrains when absent)")
      ->check(CLI::ExistingFile);

  std::string table_out;
  double lo = -20.0, hi = 20.0, step = 1e-3;
  auto* ut = app.add_subcommand("utility-table", "utility values and derivatives on a grid");
  ut->add_option("--out", table_out, "output CSV")->required();
  ut->add_option("--lo", lo, "grid start");
  ut->add_option("--hi", hi, "grid end");
  ut->add_option("--step", step, "grid spacing");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (pre->parsed()) return cmd_pretrain(pre_args);
    if (align->parsed()) return cmd_align(align_args, align_ckpt, objective);
    if (smp->parsed()) return cmd_sample(sample_args, sample_ckpt);
    if (ev->parsed()) return cmd_eval(eval_args, cloud);
    if (abl->parsed()) return cmd_ablate(ablate_args, axis, axis_values, ablate_ckpt);
    if (ut->parsed()) return cmd_utility_table(table_out, lo, hi, step);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kExitDiverged;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return kExitIo;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kExitIo;
  }
  return kExitUsage;
}
