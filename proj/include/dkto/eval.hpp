// SPDX-License-Identifier: Apache-2.0
//
// Scoring of sampled clouds against the desirable/undesirable reference
// Gaussians, utility-curve tables, SVG scatter panels and run rankings.
#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dkto/alignment.hpp"
#include "dkto/ddpm.hpp"

namespace dkto {

struct ReferenceSpec {
  Point mu_d{0.3, 0.8};
  Point mu_u{0.3, 0.6};
  double var = 0.01;
};

// log N(x; mu_d, var I) - log N(x; mu_u, var I).
double desirable_score(const Point& x, const Point& mu_d, const Point& mu_u, double var);

struct MetricsReport {
  double desirable_score_mean = 0.0;
  double win_fraction = 0.0;  // share of points with desirable_score > 0
  double mean_dist_desirable = 0.0;
  double mean_dist_undesirable = 0.0;
  Point sample_mean = Point::Zero();
  Eigen::Matrix2d sample_cov = Eigen::Matrix2d::Zero();  // unbiased; zero for n = 1
  std::size_t n = 0;
};

// Points are summed in sorted order, so the report does not depend on the
// input order.
MetricsReport eval_cloud(const Cloud& points, const ReferenceSpec& ref);

nlohmann::json to_json(const MetricsReport& r);
MetricsReport report_from_json(const nlohmann::json& j);
void write_report_json(const std::filesystem::path& path, const MetricsReport& r);
MetricsReport read_report_json(const std::filesystem::path& path);

inline constexpr std::array<UtilityKind, 3> kUtilityKinds = {
    UtilityKind::loss_averse, UtilityKind::risk_seeking, UtilityKind::kahneman_tversky};

struct UtilityRow {
  double v = 0.0;
  std::array<double, 3> value{};       // ordered as kUtilityKinds
  std::array<double, 3> derivative{};
};

struct UtilityTable {
  std::vector<UtilityRow> rows;
};

// Grid of integer multiples of `step` inside [lo, hi], so v = 0 is hit
// exactly whenever lo <= 0 <= hi.
UtilityTable utility_table(double lo, double hi, double step);
std::string utility_table_csv(const UtilityTable& table);

struct NamedCloud {
  std::string name;
  Cloud points;
};

// One 1x1 panel per cloud, side by side; one <circle> per point, reference
// means drawn as crosses.
std::string render_scatter(const std::vector<NamedCloud>& clouds, const ReferenceSpec& ref);
void emit_scatter(const std::vector<NamedCloud>& clouds, const ReferenceSpec& ref, const std::filesystem::path& path);

struct TaggedReport {
  std::string tag;
  std::optional<MetricsReport> report;  // empty when the run failed
  std::string error;
};

// Stable sort by desirable_score_mean, descending; failed runs last.
std::vector<TaggedReport> rank_runs(std::vector<TaggedReport> runs);
std::string compare_runs_csv(const std::vector<TaggedReport>& runs);
void compare_runs(const std::vector<TaggedReport>& runs, const std::filesystem::path& path);

void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace dkto
