// SPDX-License-Identifier: Apache-2.0
//
// Synthetic Gaussian suite, pairwise-to-binary feedback conversion, and
// CSV persistence.
//
//   points / datasets   x,y[,w]
//   preference pairs    prompt_id,winner_id,loser_id
//   sample table        id,x,y
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dkto/alignment.hpp"
#include "dkto/ddpm.hpp"

namespace dkto {

struct GaussianSpec {
  Point mean{0.0, 0.0};
  double variance = 1.0;  // isotropic, per coordinate
  std::size_t count = 1;
  std::uint64_t seed = 0;
};

// Variance below this floor is raised to it.
inline constexpr double kVarianceFloor = 1e-12;

Cloud gen_gaussian(const GaussianSpec& spec);

struct SuiteParams {
  Point pretrain_mean{0.5, 0.8};
  double pretrain_variance = 0.04;
  Point desirable_mean{0.3, 0.8};
  Point undesirable_mean{0.3, 0.6};
  double reference_variance = 0.01;
  std::size_t pretrain_count = 20000;
  std::size_t desirable_count = 5000;
  std::size_t undesirable_count = 5000;
};

struct SyntheticSuite {
  Cloud pretrain;
  std::vector<LabeledSample> desirable;    // all w = +1
  std::vector<LabeledSample> undesirable;  // all w = -1

  // desirable followed by undesirable
  std::vector<LabeledSample> labeled() const;
};

// Each of the three sets draws from its own substream of `seed`.
SyntheticSuite make_synthetic_suite(std::uint64_t seed, const SuiteParams& params = {});

struct PreferencePairRecord {
  std::string prompt_id;
  std::string winner_id;
  std::string loser_id;
};

struct BinaryFeedbackRecord {
  std::string sample_id;
  int w = 1;

  bool operator==(const BinaryFeedbackRecord&) const = default;
};

// Desirable iff the sample wins at least one comparison. Output is ordered
// by first appearance; samples in no pair do not appear.
std::vector<BinaryFeedbackRecord> partition_at_least_once(const std::vector<PreferencePairRecord>& pairs);

// Desirable iff the sample wins at least once and never loses.
std::vector<BinaryFeedbackRecord> partition_win_only(const std::vector<PreferencePairRecord>& pairs);

// Joins feedback records with a sample table (id -> point).
std::vector<LabeledSample> to_labeled(const std::vector<BinaryFeedbackRecord>& feedback,
                                      const std::map<std::string, Point>& samples);

// Ids "d<i>" for the desirable set and "u<i>" for the undesirable set.
std::map<std::string, Point> suite_sample_table(const SyntheticSuite& suite);

// Toy pairwise preferences: `count` comparisons between two distinct ids
// drawn uniformly from the table; the higher score wins and exact ties are
// redrawn.
std::vector<PreferencePairRecord> label_pairs(const std::map<std::string, Point>& samples, std::size_t count,
                                              const std::function<double(const Point&)>& score, Rng& rng);

void write_points_csv(const std::filesystem::path& path, const Cloud& points);
// Accepts `x,y` or `x,y,w` files; labels are ignored.
Cloud read_points_csv(const std::filesystem::path& path);

void write_labeled_csv(const std::filesystem::path& path, const std::vector<LabeledSample>& data);
std::vector<LabeledSample> read_labeled_csv(const std::filesystem::path& path);

void write_pairs_csv(const std::filesystem::path& path, const std::vector<PreferencePairRecord>& pairs);
std::vector<PreferencePairRecord> read_pairs_csv(const std::filesystem::path& path);

void write_sample_table_csv(const std::filesystem::path& path, const std::map<std::string, Point>& samples);
std::map<std::string, Point> read_sample_table_csv(const std::filesystem::path& path);

}  // namespace dkto
