// SPDX-License-Identifier: Apache-2.0
#include "dkto/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dkto/checkpoint.hpp"
#include "dkto/csv.hpp"
#include "dkto/errors.hpp"

namespace dkto {

double desirable_score(const Point& x, const Point& mu_d, const Point& mu_u, double var) {
  if (!(var > 0.0)) throw UsageError("desirable_score needs var > 0");
  // The normalizers cancel; only the quadratic terms remain.
  return ((x - mu_u).squaredNorm() - (x - mu_d).squaredNorm()) / (2.0 * var);
}

MetricsReport eval_cloud(const Cloud& points, const ReferenceSpec& ref) {
  if (points.empty()) throw UsageError("cannot evaluate an empty cloud");
  Cloud sorted = points;
  std::sort(sorted.begin(), sorted.end(),
            [](const Point& a, const Point& b) { return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y()); });

  MetricsReport r;
  r.n = sorted.size();
  const double n = static_cast<double>(r.n);
  std::size_t wins = 0;
  double score = 0.0, dd = 0.0, du = 0.0;
  Point sum = Point::Zero();
  for (const auto& p : sorted) {
    const double s = desirable_score(p, ref.mu_d, ref.mu_u, ref.var);
    score += s;
    wins += s > 0.0 ? 1 : 0;
    dd += (p - ref.mu_d).norm();
    du += (p - ref.mu_u).norm();
    sum += p;
  }
  r.desirable_score_mean = score / n;
  r.win_fraction = static_cast<double>(wins) / n;
  r.mean_dist_desirable = dd / n;
  r.mean_dist_undesirable = du / n;
  r.sample_mean = sum / n;
  if (r.n > 1) {
    Eigen::Matrix2d c = Eigen::Matrix2d::Zero();
    for (const auto& p : sorted) {
      const Point d = p - r.sample_mean;
      c += d * d.transpose();
    }
    r.sample_cov = c / (n - 1.0);
  }
  return r;
}

nlohmann::json to_json(const MetricsReport& r) {
  return {{"desirable_score_mean", r.desirable_score_mean},
          {"win_fraction", r.win_fraction},
          {"mean_dist_desirable", r.mean_dist_desirable},
          {"mean_dist_undesirable", r.mean_dist_undesirable},
          {"sample_mean", {r.sample_mean.x(), r.sample_mean.y()}},
          {"sample_cov", {{r.sample_cov(0, 0), r.sample_cov(0, 1)}, {r.sample_cov(1, 0), r.sample_cov(1, 1)}}},
          {"n", r.n}};
}

MetricsReport report_from_json(const nlohmann::json& j) {
  try {
    MetricsReport r;
    r.desirable_score_mean = j.at("desirable_score_mean").get<double>();
    r.win_fraction = j.at("win_fraction").get<double>();
    r.mean_dist_desirable = j.at("mean_dist_desirable").get<double>();
    r.mean_dist_undesirable = j.at("mean_dist_undesirable").get<double>();
    const auto& m = j.at("sample_mean");
    r.sample_mean = Point(m.at(0).get<double>(), m.at(1).get<double>());
    const auto& c = j.at("sample_cov");
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b) r.sample_cov(a, b) = c.at(a).at(b).get<double>();
    r.n = j.at("n").get<std::size_t>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed metrics report: ") + e.what());
  }
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

void write_report_json(const std::filesystem::path& path, const MetricsReport& r) {
  write_text_file(path, to_json(r).dump(2) + "\n");
}

MetricsReport read_report_json(const std::filesystem::path& path) {
  const auto j = read_json_file(path);
  try {
    return report_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string(), 1, std::string("not a metrics report: ") + e.what());
  }
}

UtilityTable utility_table(double lo, double hi, double step) {
  if (!(step > 0.0) || !(lo <= hi) || !std::isfinite(lo) || !std::isfinite(hi))
    throw UsageError("utility grid needs lo <= hi and step > 0");
  const auto first = static_cast<long long>(std::ceil(lo / step - 1e-9));
  const auto last = static_cast<long long>(std::floor(hi / step + 1e-9));
  if (last < first) throw UsageError("utility grid is empty");
  UtilityTable t;
  t.rows.reserve(static_cast<std::size_t>(last - first + 1));
  for (long long i = first; i <= last; ++i) {
    UtilityRow row;
    row.v = static_cast<double>(i) * step;
    for (std::size_t k = 0; k < kUtilityKinds.size(); ++k) {
      row.value[k] = utility_value(kUtilityKinds[k], row.v);
      row.derivative[k] = utility_derivative(kUtilityKinds[k], row.v);
    }
    t.rows.push_back(row);
  }
  return t;
}

std::string utility_table_csv(const UtilityTable& table) {
  std::ostringstream out;
  out << "v";
  for (auto k : kUtilityKinds) out << ',' << to_string(k);
  for (auto k : kUtilityKinds) out << ",d_" << to_string(k);
  out << '\n';
  for (const auto& r : table.rows) {
    out << csv::format_double(r.v);
    for (double x : r.value) out << ',' << csv::format_double(x);
    for (double x : r.derivative) out << ',' << csv::format_double(x);
    out << '\n';
  }
  return out.str();
}

namespace {

constexpr double kPanel = 300.0;
constexpr double kMargin = 30.0;
constexpr double kTitle = 20.0;

std::string fmt2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string render_scatter(const std::vector<NamedCloud>& clouds, const ReferenceSpec& ref) {
  if (clouds.empty()) throw UsageError("scatter plot needs at least one cloud");
  const double width = static_cast<double>(clouds.size()) * (kPanel + kMargin) + kMargin;
  const double height = kPanel + 2 * kMargin + kTitle;
  std::ostringstream svg;
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << fmt2(width) << "\" height=\""
      << fmt2(height) << "\" viewBox=\"0 0 " << fmt2(width) << ' ' << fmt2(height) << "\">\n"
      << "<rect x=\"0\" y=\"0\" width=\"" << fmt2(width) << "\" height=\"" << fmt2(height) << "\" fill=\"white\"/>\n";
  for (std::size_t i = 0; i < clouds.size(); ++i) {
    const double ox = kMargin + static_cast<double>(i) * (kPanel + kMargin);
    const double oy = kMargin + kTitle;
    auto px = [&](double x) { return fmt2(ox + x * kPanel); };
    auto py = [&](double y) { return fmt2(oy + (1.0 - y) * kPanel); };
    svg << "<g id=\"panel-" << i << "\" class=\"panel\">\n"
        << "<clipPath id=\"clip-" << i << "\"><rect x=\"" << fmt2(ox) << "\" y=\"" << fmt2(oy) << "\" width=\""
        << fmt2(kPanel) << "\" height=\"" << fmt2(kPanel) << "\"/></clipPath>\n"
        << "<text x=\"" << fmt2(ox + kPanel / 2) << "\" y=\"" << fmt2(kMargin + 8) << "\" text-anchor=\"middle\" "
        << "font-family=\"sans-serif\" font-size=\"14\">" << escape_xml(clouds[i].name) << "</text>\n"
        << "<rect x=\"" << fmt2(ox) << "\" y=\"" << fmt2(oy) << "\" width=\"" << fmt2(kPanel) << "\" height=\""
        << fmt2(kPanel) << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (double tick : {0.0, 0.5, 1.0}) {
      svg << "<text x=\"" << px(tick) << "\" y=\"" << fmt2(oy + kPanel + 14) << "\" text-anchor=\"middle\" "
          << "font-family=\"sans-serif\" font-size=\"10\">" << fmt2(tick) << "</text>\n"
          << "<text x=\"" << fmt2(ox - 4) << "\" y=\"" << py(tick) << "\" text-anchor=\"end\" "
          << "font-family=\"sans-serif\" font-size=\"10\">" << fmt2(tick) << "</text>\n";
    }
    svg << "<g class=\"points\" clip-path=\"url(#clip-" << i << ")\" fill=\"#1f77b4\" fill-opacity=\"0.35\">\n";
    for (const auto& p : clouds[i].points)
      svg << "<circle cx=\"" << px(p.x()) << "\" cy=\"" << py(p.y()) << "\" r=\"1.5\"/>\n";
    svg << "</g>\n";
    const std::pair<const Point*, const char*> marks[] = {{&ref.mu_d, "#2ca02c"}, {&ref.mu_u, "#d62728"}};
    for (const auto& [mu, color] : marks) {
      const double cx = ox + mu->x() * kPanel;
      const double cy = oy + (1.0 - mu->y()) * kPanel;
      svg << "<path class=\"ref-mean\" d=\"M " << fmt2(cx - 6) << ' ' << fmt2(cy - 6) << " L " << fmt2(cx + 6) << ' '
          << fmt2(cy + 6) << " M " << fmt2(cx - 6) << ' ' << fmt2(cy + 6) << " L " << fmt2(cx + 6) << ' '
          << fmt2(cy - 6) << "\" stroke=\"" << color << "\" stroke-width=\"2.5\"/>\n";
    }
    svg << "</g>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

void emit_scatter(const std::vector<NamedCloud>& clouds, const ReferenceSpec& ref, const std::filesystem::path& path) {
  write_text_file(path, render_scatter(clouds, ref));
}

std::vector<TaggedReport> rank_runs(std::vector<TaggedReport> runs) {
  std::stable_sort(runs.begin(), runs.end(), [](const TaggedReport& a, const TaggedReport& b) {
    if (a.report && b.report) return a.report->desirable_score_mean > b.report->desirable_score_mean;
    return a.report.has_value() && !b.report.has_value();
  });
  return runs;
}

std::string compare_runs_csv(const std::vector<TaggedReport>& runs) {
  if (runs.size() < 2) throw UsageError("ranking needs at least two runs");
  std::ostringstream out;
  out << "rank,tag,status,desirable_score_mean,win_fraction,mean_dist_desirable,mean_dist_undesirable,"
         "sample_mean_x,sample_mean_y,cov_xx,cov_xy,cov_yy,n\n";
  int rank = 0;
  for (const auto& r : rank_runs(runs)) {
    out << ++rank << ',' << r.tag << ',';
    if (!r.report) {
      out << "failed";
      for (int i = 0; i < 10; ++i) out << ",failed";
      out << '\n';
      continue;
    }
    const auto& m = *r.report;
    out << "ok," << csv::format_double(m.desirable_score_mean) << ',' << csv::format_double(m.win_fraction) << ','
        << csv::format_double(m.mean_dist_desirable) << ',' << csv::format_double(m.mean_dist_undesirable) << ','
        << csv::format_double(m.sample_mean.x()) << ',' << csv::format_double(m.sample_mean.y()) << ','
        << csv::format_double(m.sample_cov(0, 0)) << ',' << csv::format_double(m.sample_cov(0, 1)) << ','
        << csv::format_double(m.sample_cov(1, 1)) << ',' << m.n << '\n';
  }
  return out.str();
}

void compare_runs(const std::vector<TaggedReport>& runs, const std::filesystem::path& path) {
  write_text_file(path, compare_runs_csv(runs));
}

}  // namespace dkto
