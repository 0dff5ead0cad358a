// SPDX-License-Identifier: Apache-2.0
#include "dkto/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <stdexcept>

#include "dkto/csv.hpp"
#include "dkto/errors.hpp"

namespace dkto {

Cloud gen_gaussian(const GaussianSpec& spec) {
  if (!(spec.variance >= 0.0) || !std::isfinite(spec.variance)) throw ConfigError("variance must be non-negative");
  const double sd = std::sqrt(std::max(spec.variance, kVarianceFloor));
  Rng rng(spec.seed);
  Cloud out(spec.count);
  for (auto& p : out) {
    const double a = standard_normal(rng);
    const double b = standard_normal(rng);
    p = spec.mean + sd * Point(a, b);
  }
  return out;
}

std::vector<LabeledSample> SyntheticSuite::labeled() const {
  std::vector<LabeledSample> out = desirable;
  out.insert(out.end(), undesirable.begin(), undesirable.end());
  return out;
}

SyntheticSuite make_synthetic_suite(std::uint64_t seed, const SuiteParams& params) {
  SyntheticSuite s;
  s.pretrain = gen_gaussian(
      {params.pretrain_mean, params.pretrain_variance, params.pretrain_count, derive_seed(seed, "data/pretrain")});
  for (const auto& p : gen_gaussian({params.desirable_mean, params.reference_variance, params.desirable_count,
                                     derive_seed(seed, "data/desirable")}))
    s.desirable.push_back({p, 1, Cond::none});
  for (const auto& p : gen_gaussian({params.undesirable_mean, params.reference_variance, params.undesirable_count,
                                     derive_seed(seed, "data/undesirable")}))
    s.undesirable.push_back({p, -1, Cond::none});
  return s;
}

namespace {

struct Tally {
  std::vector<std::string> order;
  std::map<std::string, std::pair<int, int>> wins_losses;

  void add(const std::string& id, bool won) {
    auto [it, inserted] = wins_losses.try_emplace(id, 0, 0);
    if (inserted) order.push_back(id);
    (won ? it->second.first : it->second.second)++;
  }
};

Tally tally(const std::vector<PreferencePairRecord>& pairs) {
  Tally t;
  for (const auto& p : pairs) {
    if (p.winner_id == p.loser_id) throw UsageError("pair with winner == loser: " + p.winner_id);
    t.add(p.winner_id, true);
    t.add(p.loser_id, false);
  }
  return t;
}

}  // namespace

std::vector<BinaryFeedbackRecord> partition_at_least_once(const std::vector<PreferencePairRecord>& pairs) {
  const auto t = tally(pairs);
  std::vector<BinaryFeedbackRecord> out;
  for (const auto& id : t.order) out.push_back({id, t.wins_losses.at(id).first > 0 ? 1 : -1});
  return out;
}

std::vector<BinaryFeedbackRecord> partition_win_only(const std::vector<PreferencePairRecord>& pairs) {
  const auto t = tally(pairs);
  std::vector<BinaryFeedbackRecord> out;
  for (const auto& id : t.order) {
    const auto [wins, losses] = t.wins_losses.at(id);
    out.push_back({id, wins > 0 && losses == 0 ? 1 : -1});
  }
  return out;
}

std::vector<LabeledSample> to_labeled(const std::vector<BinaryFeedbackRecord>& feedback,
                                      const std::map<std::string, Point>& samples) {
  std::vector<LabeledSample> out;
  for (const auto& f : feedback) {
    auto it = samples.find(f.sample_id);
    if (it == samples.end()) throw UsageError("sample '" + f.sample_id + "' missing from the sample table");
    out.push_back({it->second, f.w, Cond::none});
  }
  return out;
}

std::map<std::string, Point> suite_sample_table(const SyntheticSuite& suite) {
  std::map<std::string, Point> table;
  for (std::size_t i = 0; i < suite.desirable.size(); ++i) table.emplace("d" + std::to_string(i), suite.desirable[i].x0);
  for (std::size_t i = 0; i < suite.undesirable.size(); ++i)
    table.emplace("u" + std::to_string(i), suite.undesirable[i].x0);
  return table;
}

std::vector<PreferencePairRecord> label_pairs(const std::map<std::string, Point>& samples, std::size_t count,
                                              const std::function<double(const Point&)>& score, Rng& rng) {
  if (count > 0 && samples.size() < 2) throw UsageError("labeling pairs needs at least two samples");
  std::vector<const std::pair<const std::string, Point>*> entries;
  std::vector<double> scores;
  for (const auto& e : samples) {
    entries.push_back(&e);
    scores.push_back(score(e.second));
  }
  std::uniform_int_distribution<std::size_t> pick(0, entries.size() - 1);
  std::vector<PreferencePairRecord> pairs;
  pairs.reserve(count);
  std::size_t redraws = 0;
  while (pairs.size() < count) {
    const std::size_t a = pick(rng), b = pick(rng);
    if (a == b || scores[a] == scores[b]) {
      if (++redraws > 100 * (count + 1)) throw UsageError("cannot find distinct-score pairs to label");
      continue;
    }
    const bool a_wins = scores[a] > scores[b];
    pairs.push_back({"p" + std::to_string(pairs.size()), (a_wins ? entries[a] : entries[b])->first,
                     (a_wins ? entries[b] : entries[a])->first});
  }
  return pairs;
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

void close_out(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw IoError("write failed for " + path.string());
}

// Reads a CSV with one of the accepted headers; calls `row` for every data
// line with its fields and 1-based line number.
template <typename RowFn>
void read_csv(const std::filesystem::path& path, const std::vector<std::vector<std::string>>& headers, RowFn row) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  std::size_t lineno = 0;
  std::size_t width = 0;
  if (!std::getline(in, line)) throw ParseError(path.string(), 1, "missing header");
  ++lineno;
  const auto head = csv::split(csv::chomp(line));
  bool ok = false;
  for (const auto& h : headers) {
    if (h.size() != head.size()) continue;
    if (std::equal(h.begin(), h.end(), head.begin())) {
      ok = true;
      width = h.size();
    }
  }
  if (!ok) throw ParseError(path.string(), 1, "unexpected header '" + line + "'");
  while (std::getline(in, line)) {
    ++lineno;
    const auto body = csv::chomp(line);
    if (body.empty()) continue;
    const auto fields = csv::split(body);
    if (fields.size() != width)
      throw ParseError(path.string(), lineno,
                       "expected " + std::to_string(width) + " fields, found " + std::to_string(fields.size()));
    try {
      row(fields, width);
    } catch (const std::invalid_argument& e) {
      throw ParseError(path.string(), lineno, e.what());
    }
  }
}

const std::string& checked_id(const std::string& id) {
  if (id.empty() || id.find_first_of(",\r\n") != std::string::npos)
    throw UsageError("sample id '" + id + "' is empty or contains a separator");
  return id;
}

int parse_label(std::string_view f) {
  const auto w = csv::parse_int(f);
  if (w != 1 && w != -1) throw std::invalid_argument("label must be 1 or -1, got '" + std::string(f) + "'");
  return static_cast<int>(w);
}

}  // namespace

void write_points_csv(const std::filesystem::path& path, const Cloud& points) {
  auto out = open_out(path);
  out << "x,y\n";
  for (const auto& p : points) out << csv::format_double(p.x()) << ',' << csv::format_double(p.y()) << '\n';
  close_out(out, path);
}

Cloud read_points_csv(const std::filesystem::path& path) {
  Cloud out;
  read_csv(path, {{"x", "y"}, {"x", "y", "w"}}, [&](const auto& f, std::size_t width) {
    if (width == 3) parse_label(f[2]);
    out.emplace_back(csv::parse_double(f[0]), csv::parse_double(f[1]));
  });
  return out;
}

void write_labeled_csv(const std::filesystem::path& path, const std::vector<LabeledSample>& data) {
  auto out = open_out(path);
  out << "x,y,w\n";
  for (const auto& s : data)
    out << csv::format_double(s.x0.x()) << ',' << csv::format_double(s.x0.y()) << ',' << s.w << '\n';
  close_out(out, path);
}

std::vector<LabeledSample> read_labeled_csv(const std::filesystem::path& path) {
  std::vector<LabeledSample> out;
  read_csv(path, {{"x", "y", "w"}}, [&](const auto& f, std::size_t) {
    out.push_back({Point(csv::parse_double(f[0]), csv::parse_double(f[1])), parse_label(f[2]), Cond::none});
  });
  return out;
}

void write_pairs_csv(const std::filesystem::path& path, const std::vector<PreferencePairRecord>& pairs) {
  auto out = open_out(path);
  out << "prompt_id,winner_id,loser_id\n";
  for (const auto& p : pairs)
    out << checked_id(p.prompt_id) << ',' << checked_id(p.winner_id) << ',' << checked_id(p.loser_id) << '\n';
  close_out(out, path);
}

std::vector<PreferencePairRecord> read_pairs_csv(const std::filesystem::path& path) {
  std::vector<PreferencePairRecord> out;
  read_csv(path, {{"prompt_id", "winner_id", "loser_id"}}, [&](const auto& f, std::size_t) {
    if (f[1] == f[2]) throw std::invalid_argument("winner and loser are the same sample");
    out.push_back({std::string(f[0]), std::string(f[1]), std::string(f[2])});
  });
  return out;
}

void write_sample_table_csv(const std::filesystem::path& path, const std::map<std::string, Point>& samples) {
  auto out = open_out(path);
  out << "id,x,y\n";
  for (const auto& [id, p] : samples)
    out << checked_id(id) << ',' << csv::format_double(p.x()) << ',' << csv::format_double(p.y()) << '\n';
  close_out(out, path);
}

std::map<std::string, Point> read_sample_table_csv(const std::filesystem::path& path) {
  std::map<std::string, Point> out;
  read_csv(path, {{"id", "x", "y"}}, [&](const auto& f, std::size_t) {
    const std::string id(f[0]);
    if (out.count(id)) throw std::invalid_argument("duplicate sample id '" + id + "'");
    out.emplace(id, Point(csv::parse_double(f[1]), csv::parse_double(f[2])));
  });
  return out;
}

}  // namespace dkto
