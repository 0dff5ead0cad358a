// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: a fixed key schema, a TOML-style file format, and
// environment / command-line overrides.
//
//   # comment
//   [align]
//   beta = 50
//   utility = "kahneman_tversky"
//
// Keys are addressed as section.key. Precedence, lowest first: schema
// defaults, config file, DKTO_<SECTION>_<KEY> environment variables,
// --section.key flags. Unknown keys and malformed values are ConfigError.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "dkto/alignment.hpp"
#include "dkto/datasets.hpp"
#include "dkto/ddpm.hpp"
#include "dkto/eval.hpp"

namespace dkto {

enum class ValueKind { integer, real, boolean, text, int_list };

struct KeySpec {
  std::string key;  // section.key
  ValueKind kind;
  std::string default_value;
  std::vector<std::string> choices;  // text keys only; empty = free text
  std::string help;
};

const std::vector<KeySpec>& config_schema();
const KeySpec& key_spec(std::string_view key);  // ConfigError if unknown

// DKTO_ plus the key upper-cased with '.' replaced by '_'.
std::string env_name(std::string_view key);

class ConfigValues {
 public:
  ConfigValues();  // schema defaults

  // Validates and stores the canonical form of `value`.
  void set(std::string_view key, std::string_view value, std::string_view origin = "override");
  const std::string& get(std::string_view key) const;

  long long integer(std::string_view key) const;
  double real(std::string_view key) const;
  bool boolean(std::string_view key) const;
  const std::string& text(std::string_view key) const;
  std::vector<int> int_list(std::string_view key) const;

  // Canonical file rendering of every key in schema order.
  std::string snapshot() const;
  // fnv1a64 of snapshot(), 16 hex digits.
  std::string hash() const;
  nlohmann::json to_json() const;

 private:
  std::map<std::string, std::string, std::less<>> values_;
};

void apply_config_text(ConfigValues& values, std::string_view text, std::string_view origin);
void apply_config_file(ConfigValues& values, const std::filesystem::path& path);
// `lookup` defaults to std::getenv.
void apply_env(ConfigValues& values, const std::function<std::optional<std::string>(const std::string&)>& lookup = {});

struct ObjectiveChoice {
  Objective objective = Objective::kto;
  UtilityKind utility = UtilityKind::kahneman_tversky;
};

inline const std::vector<std::string>& objective_names() {
  static const std::vector<std::string> names = {"kto",  "loss_averse", "risk_seeking", "kahneman_tversky",
                                                 "dpo_pair", "sft", "csft"};
  return names;
}

// The three utility names select kto with that utility; "kto" keeps
// `kto_utility`. UsageError for anything else.
ObjectiveChoice parse_objective(std::string_view name, UtilityKind kto_utility);

enum class Feedback { direct, at_least_once, win_only };

struct RunConfig {
  std::uint64_t seed = 0;
  SuiteParams suite;
  Feedback feedback = Feedback::direct;
  std::size_t pair_count = 0;
  DenoiserArch arch;
  ScheduleSpec schedule;
  PretrainConfig pretrain;
  std::string objective = "kto";
  ObjectiveChoice choice;
  AlignmentConfig align;  // align.seed is the run seed; streams are derived later
  std::size_t sample_n = 3500;
  std::string sample_cond = "auto";

  ReferenceSpec reference() const;
};

RunConfig resolve(const ConfigValues& values);

}  // namespace dkto
