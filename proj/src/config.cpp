// SPDX-License-Identifier: Apache-2.0
#include "dkto/config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>

#include "dkto/csv.hpp"
#include "dkto/errors.hpp"
#include "dkto/rng.hpp"

namespace dkto {

namespace {

std::vector<KeySpec> build_schema() {
  using K = ValueKind;
  return {
      {"run.seed", K::integer, "0", {}, "run seed; all random streams derive from it"},
      {"data.pretrain_mean_x", K::real, "0.5", {}, "pretraining Gaussian mean, x"},
      {"data.pretrain_mean_y", K::real, "0.8", {}, "pretraining Gaussian mean, y"},
      {"data.pretrain_variance", K::real, "0.04", {}, "pretraining Gaussian variance per coordinate"},
      {"data.desirable_mean_x", K::real, "0.3", {}, "desirable Gaussian mean, x"},
      {"data.desirable_mean_y", K::real, "0.8", {}, "desirable Gaussian mean, y"},
      {"data.undesirable_mean_x", K::real, "0.3", {}, "undesirable Gaussian mean, x"},
      {"data.undesirable_mean_y", K::real, "0.6", {}, "undesirable Gaussian mean, y"},
      {"data.reference_variance", K::real, "0.01", {}, "variance of both reference Gaussians"},
      {"data.pretrain_count", K::integer, "20000", {}, "pretraining set size"},
      {"data.desirable_count", K::integer, "5000", {}, "desirable set size"},
      {"data.undesirable_count", K::integer, "5000", {}, "undesirable set size"},
      {"data.feedback", K::text, "direct", {"direct", "at_least_once", "win_only"},
       "direct labels, or labels derived from toy pairwise comparisons"},
      {"data.pair_count", K::integer, "20000", {}, "comparisons drawn when feedback is pairwise"},
      {"model.hidden", K::int_list, "128,128,128", {}, "hidden layer widths"},
      {"model.activation", K::text, "silu", {"silu", "relu"}, "hidden activation"},
      {"model.time_embed_dim", K::integer, "32", {}, "sinusoidal time embedding size (even)"},
      {"model.max_period", K::real, "10000", {}, "time embedding max period"},
      {"schedule.steps", K::integer, "100", {}, "diffusion steps T"},
      {"schedule.beta_start", K::real, "0.0001", {}, "first noise variance"},
      {"schedule.beta_end", K::real, "0.02", {}, "last noise variance"},
      {"pretrain.steps", K::integer, "20000", {}, "pretraining optimizer steps"},
      {"pretrain.batch_size", K::integer, "128", {}, "pretraining batch size"},
      {"pretrain.lr", K::real, "0.001", {}, "pretraining Adam learning rate"},
      {"align.objective", K::text, "kto", objective_names(), "alignment objective"},
      {"align.utility", K::text, "kahneman_tversky", {"loss_averse", "risk_seeking", "kahneman_tversky"},
       "utility used by the kto objective"},
      {"align.beta", K::real, "50", {}, "implicit reward scale"},
      {"align.gamma", K::real, "0.8", {}, "probability of drawing a desirable sample"},
      {"align.batch_size", K::integer, "1024", {}, "alignment batch size"},
      {"align.kl_batch", K::integer, "1024", {}, "mismatched pairs in the KL reference estimate"},
      {"align.steps", K::integer, "300", {}, "alignment optimizer steps"},
      {"align.lr", K::real, "3e-05", {}, "alignment Adam learning rate"},
      {"align.adam_beta1", K::real, "0.9", {}, "Adam first-moment decay"},
      {"align.adam_beta2", K::real, "0.999", {}, "Adam second-moment decay"},
      {"align.adam_eps", K::real, "1e-08", {}, "Adam epsilon"},
      {"align.kl_beta_scaling", K::boolean, "true", {}, "multiply the KL reference estimate by beta"},
      {"sample.n", K::integer, "3500", {}, "points sampled per model"},
      {"sample.cond", K::text, "auto", {"auto", "none", "good", "bad"},
       "condition token; auto picks good for conditional models"},
  };
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string canonical(const KeySpec& spec, std::string_view raw) {
  std::string v = trim(raw);
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') v = v.substr(1, v.size() - 2);
  auto bad = [&](const std::string& why) {
    return ConfigError("invalid value '" + v + "' for " + spec.key + ": " + why);
  };
  switch (spec.kind) {
    case ValueKind::integer:
      try {
        const long long n = csv::parse_int(v);
        if (n < 0) throw bad("expected a non-negative integer");
        return std::to_string(n);
      } catch (const std::invalid_argument&) {
        throw bad("expected an integer");
      }
    case ValueKind::real:
      try {
        const double d = csv::parse_double(v);
        if (!std::isfinite(d)) throw bad("expected a finite number");
        return csv::format_double(d);
      } catch (const std::invalid_argument&) {
        throw bad("expected a number");
      }
    case ValueKind::boolean: {
      std::string l = v;
      std::transform(l.begin(), l.end(), l.begin(), [](unsigned char c) { return std::tolower(c); });
      if (l == "true" || l == "on" || l == "1" || l == "yes") return "true";
      if (l == "false" || l == "off" || l == "0" || l == "no") return "false";
      throw bad("expected true/false");
    }
    case ValueKind::int_list: {
      std::string out;
      for (const auto& part : csv::split(v)) {
        long long n = 0;
        try {
          n = csv::parse_int(trim(part));
        } catch (const std::invalid_argument&) {
          throw bad("expected comma-separated integers");
        }
        if (!out.empty()) out += ',';
        out += std::to_string(n);
      }
      if (out.empty()) throw bad("empty list");
      return out;
    }
    case ValueKind::text: {
      if (v.find_first_of("\"\n") != std::string::npos) throw bad("quotes and newlines are not allowed");
      if (!spec.choices.empty() && std::find(spec.choices.begin(), spec.choices.end(), v) == spec.choices.end()) {
        std::string list;
        for (const auto& c : spec.choices) list += (list.empty() ? "" : ", ") + c;
        throw bad("expected one of " + list);
      }
      return v;
    }
  }
  throw bad("unknown kind");
}

std::string render(const KeySpec& spec, const std::string& value) {
  if (spec.kind == ValueKind::text || spec.kind == ValueKind::int_list) return '"' + value + '"';
  return value;
}

}  // namespace

const std::vector<KeySpec>& config_schema() {
  static const std::vector<KeySpec> schema = build_schema();
  return schema;
}

const KeySpec& key_spec(std::string_view key) {
  for (const auto& s : config_schema())
    if (s.key == key) return s;
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

std::string env_name(std::string_view key) {
  std::string out = "DKTO_";
  for (char c : key) out += c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

ConfigValues::ConfigValues() {
  for (const auto& s : config_schema()) values_.emplace(s.key, canonical(s, s.default_value));
}

void ConfigValues::set(std::string_view key, std::string_view value, std::string_view origin) {
  const KeySpec* spec = nullptr;
  try {
    spec = &key_spec(key);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string(origin) + ": " + e.what());
  }
  try {
    values_[spec->key] = canonical(*spec, value);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string(origin) + ": " + e.what());
  }
}

const std::string& ConfigValues::get(std::string_view key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + std::string(key) + "'");
  return it->second;
}

long long ConfigValues::integer(std::string_view key) const { return csv::parse_int(get(key)); }
double ConfigValues::real(std::string_view key) const { return csv::parse_double(get(key)); }
bool ConfigValues::boolean(std::string_view key) const { return get(key) == "true"; }
const std::string& ConfigValues::text(std::string_view key) const { return get(key); }

std::vector<int> ConfigValues::int_list(std::string_view key) const {
  std::vector<int> out;
  for (const auto& part : csv::split(get(key))) out.push_back(static_cast<int>(csv::parse_int(part)));
  return out;
}

std::string ConfigValues::snapshot() const {
  std::ostringstream out;
  std::string section;
  for (const auto& s : config_schema()) {
    const auto dot = s.key.find('.');
    const std::string sec = s.key.substr(0, dot);
    if (sec != section) {
      out << (section.empty() ? "" : "\n") << '[' << sec << "]\n";
      section = sec;
    }
    out << s.key.substr(dot + 1) << " = " << render(s, get(s.key)) << '\n';
  }
  return out.str();
}

std::string ConfigValues::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(snapshot())));
  return buf;
}

nlohmann::json ConfigValues::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& s : config_schema()) {
    const auto& v = get(s.key);
    switch (s.kind) {
      case ValueKind::integer: j[s.key] = csv::parse_int(v); break;
      case ValueKind::real: j[s.key] = csv::parse_double(v); break;
      case ValueKind::boolean: j[s.key] = v == "true"; break;
      default: j[s.key] = v;
    }
  }
  return j;
}

void apply_config_text(ConfigValues& values, std::string_view text, std::string_view origin) {
  std::string section;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string where = std::string(origin) + ":" + std::to_string(line_no);
    std::string line = raw;
    // A '#' starts a comment unless it sits inside a quoted value.
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line.resize(i);
        break;
      }
    }
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) throw ConfigError(where + ": malformed section header");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    if (key.empty()) throw ConfigError(where + ": missing key");
    const std::string full = section.empty() ? key : section + "." + key;
    values.set(full, std::string_view(line).substr(eq + 1), where);
  }
}

void apply_config_file(ConfigValues& values, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  apply_config_text(values, text.str(), path.string());
}

void apply_env(ConfigValues& values, const std::function<std::optional<std::string>(const std::string&)>& lookup) {
  for (const auto& s : config_schema()) {
    const std::string name = env_name(s.key);
    std::optional<std::string> v;
    if (lookup) {
      v = lookup(name);
    } else if (const char* e = std::getenv(name.c_str())) {
      v = e;
    }
    if (v) values.set(s.key, *v, "environment " + name);
  }
}

ObjectiveChoice parse_objective(std::string_view name, UtilityKind kto_utility) {
  if (name == "kto") return {Objective::kto, kto_utility};
  if (name == "dpo_pair") return {Objective::dpo_pair, kto_utility};
  if (name == "sft") return {Objective::sft, kto_utility};
  if (name == "csft") return {Objective::csft, kto_utility};
  if (name == "loss_averse" || name == "risk_seeking" || name == "kahneman_tversky")
    return {Objective::kto, parse_utility(name)};
  throw UsageError("unknown objective '" + std::string(name) + "'");
}

ReferenceSpec RunConfig::reference() const {
  return {suite.desirable_mean, suite.undesirable_mean, suite.reference_variance};
}

RunConfig resolve(const ConfigValues& v) {
  auto count = [&](std::string_view key, long long min) {
    const long long n = v.integer(key);
    if (n < min) throw ConfigError(std::string(key) + " must be at least " + std::to_string(min));
    return n;
  };
  auto positive = [&](std::string_view key) {
    const double d = v.real(key);
    if (!(d > 0.0)) throw ConfigError(std::string(key) + " must be positive");
    return d;
  };

  RunConfig c;
  const long long seed = v.integer("run.seed");
  if (seed < 0) throw ConfigError("run.seed must be non-negative");
  c.seed = static_cast<std::uint64_t>(seed);

  c.suite.pretrain_mean = Point(v.real("data.pretrain_mean_x"), v.real("data.pretrain_mean_y"));
  c.suite.pretrain_variance = positive("data.pretrain_variance");
  c.suite.desirable_mean = Point(v.real("data.desirable_mean_x"), v.real("data.desirable_mean_y"));
  c.suite.undesirable_mean = Point(v.real("data.undesirable_mean_x"), v.real("data.undesirable_mean_y"));
  c.suite.reference_variance = positive("data.reference_variance");
  c.suite.pretrain_count = static_cast<std::size_t>(count("data.pretrain_count", 1));
  c.suite.desirable_count = static_cast<std::size_t>(count("data.desirable_count", 1));
  c.suite.undesirable_count = static_cast<std::size_t>(count("data.undesirable_count", 1));
  const auto& fb = v.text("data.feedback");
  c.feedback = fb == "direct" ? Feedback::direct : fb == "at_least_once" ? Feedback::at_least_once : Feedback::win_only;
  c.pair_count = static_cast<std::size_t>(count("data.pair_count", 1));

  c.arch.hidden = v.int_list("model.hidden");
  for (int h : c.arch.hidden)
    if (h < 1) throw ConfigError("model.hidden widths must be positive");
  c.arch.activation = parse_activation(v.text("model.activation"));
  c.arch.embedding.dim = static_cast<int>(count("model.time_embed_dim", 2));
  if (c.arch.embedding.dim % 2 != 0) throw ConfigError("model.time_embed_dim must be even");
  c.arch.embedding.max_period = positive("model.max_period");

  c.schedule.T = static_cast<int>(count("schedule.steps", 2));
  c.schedule.beta_start = v.real("schedule.beta_start");
  c.schedule.beta_end = v.real("schedule.beta_end");
  if (!(c.schedule.beta_start > 0.0 && c.schedule.beta_start <= c.schedule.beta_end && c.schedule.beta_end < 1.0))
    throw ConfigError("schedule needs 0 < beta_start <= beta_end < 1");

  c.pretrain.steps = static_cast<int>(count("pretrain.steps", 0));
  c.pretrain.batch_size = static_cast<int>(count("pretrain.batch_size", 1));
  c.pretrain.adam.lr = positive("pretrain.lr");

  c.objective = v.text("align.objective");
  c.choice = parse_objective(c.objective, parse_utility(v.text("align.utility")));
  c.align.utility = c.choice.utility;
  c.align.beta = v.real("align.beta");
  c.align.gamma = v.real("align.gamma");
  c.align.batch_size = static_cast<int>(count("align.batch_size", 1));
  c.align.kl_batch = static_cast<int>(v.integer("align.kl_batch"));
  c.align.steps = static_cast<int>(count("align.steps", 0));
  c.align.adam.lr = positive("align.lr");
  c.align.adam.beta1 = v.real("align.adam_beta1");
  c.align.adam.beta2 = v.real("align.adam_beta2");
  c.align.adam.eps = positive("align.adam_eps");
  c.align.kl_beta_scaling = v.boolean("align.kl_beta_scaling");
  c.align.seed = c.seed;
  c.align.validate();

  c.sample_n = static_cast<std::size_t>(count("sample.n", 0));
  c.sample_cond = v.text("sample.cond");
  return c;
}

}  // namespace dkto
