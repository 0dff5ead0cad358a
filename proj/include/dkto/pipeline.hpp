// SPDX-License-Identifier: Apache-2.0
//
// Stage functions shared by the command-line tool and the acceptance runner,
// and the run manifest.
//
// Every random draw comes from a named stream of the run seed
// (derive_seed = splitmix64(seed ^ fnv1a64(name))):
//   data/pretrain, data/desirable, data/undesirable   synthetic suite
//   data/pairs                                        toy pairwise comparisons
//   init                                              denoiser initialization
//   train/pretrain, train/align                       minibatches and noise
//   sample                                            ancestral sampler
#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dkto/alignment.hpp"
#include "dkto/config.hpp"
#include "dkto/datasets.hpp"
#include "dkto/ddpm.hpp"
#include "dkto/eval.hpp"

namespace dkto {

SyntheticSuite build_suite(const RunConfig& cfg);

// Labeled alignment data: the suite's own labels for feedback = direct,
// otherwise labels derived from data.pair_count toy comparisons (higher
// desirable_score wins) under the configured partition rule.
std::vector<LabeledSample> alignment_data(const RunConfig& cfg, const SyntheticSuite& suite);

DenoiserModel init_model(const RunConfig& cfg);
// Returns per-step losses; the model is left at its last finite state if a
// NumericalError escapes.
std::vector<double> run_pretrain(DenoiserModel& model, const RunConfig& cfg, const SyntheticSuite& suite);

// theta must be a copy of ref.
TrainLog run_align(DenoiserModel& theta, const DenoiserModel& ref, const RunConfig& cfg,
                   const std::vector<LabeledSample>& data);

// "auto" picks good for models with a condition table.
Cond resolve_cond(const std::string& name, const DenoiserModel& model);
Cloud run_sample(const DenoiserModel& model, const RunConfig& cfg);

std::string utc_timestamp();

struct RunManifest {
  std::string command;
  std::string status = "ok";  // ok | diverged | failed
  std::string config_snapshot;
  std::string config_hash;
  nlohmann::json config = nlohmann::json::object();
  std::uint64_t seed = 0;
  std::string started;
  std::string finished;
  std::vector<std::pair<std::string, std::filesystem::path>> outputs;
  nlohmann::json metrics = nlohmann::json::object();
  std::string diagnostics;

  RunManifest(std::string command, const ConfigValues& values, const RunConfig& cfg);
  void add_output(std::string name, std::filesystem::path path);
  nlohmann::json to_json() const;
};

// Stamps `finished`, checks that every listed output exists, writes JSON.
void write_manifest(const std::filesystem::path& path, RunManifest& manifest);

}  // namespace dkto
