// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint format (JSON, version 1):
//
//   {
//     "format": "dkto-denoiser", "version": 1,
//     "seed": <uint64>, "step_count": <int>,
//     "arch": {"input_dim", "output_dim", "hidden": [..], "activation",
//              "time_embed_dim", "max_period"},
//     "schedule": {"T", "beta_start", "beta_end"},
//     "layers": [{"rows", "cols", "weights": [row-major], "biases": [..]}],
//     "cond_vocab": null | {"rows", "cols", "values": [row-major]}
//   }
//
// Doubles are written in shortest round-trip form, so save/load is exact.
#pragma once

#include <cstdint>
#include <filesystem>

#include <json.hpp>

#include "dkto/ddpm.hpp"

namespace dkto {

inline constexpr int kCheckpointVersion = 1;

struct CheckpointMeta {
  std::uint64_t seed = 0;
  std::int64_t step_count = 0;
};

struct Checkpoint {
  DenoiserModel model;
  CheckpointMeta meta;
};

nlohmann::json checkpoint_to_json(const DenoiserModel& model, const CheckpointMeta& meta);
Checkpoint checkpoint_from_json(const nlohmann::json& j);

void save_checkpoint(const std::filesystem::path& path, const DenoiserModel& model, const CheckpointMeta& meta);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// IoError if unreadable, ParseError (with line) if not valid JSON.
nlohmann::json read_json_file(const std::filesystem::path& path);

}  // namespace dkto
