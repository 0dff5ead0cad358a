// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "dkto/datasets.hpp"
#include "dkto/errors.hpp"
#include "support.hpp"

using namespace dkto;
namespace fs = std::filesystem;

namespace {

struct Moments {
  Point mean;
  Eigen::Array2d var;
};

Moments moments(const Cloud& c) {
  Moments m{Point::Zero(), Eigen::Array2d::Zero()};
  for (const auto& p : c) m.mean += p;
  m.mean /= static_cast<double>(c.size());
  for (const auto& p : c) m.var += (p - m.mean).array().square();
  m.var /= static_cast<double>(c.size() - 1);
  return m;
}

fs::path temp_file(const std::string& name) { return fs::temp_directory_path() / ("dkto_test_" + name); }

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

bool bit_equal(double a, double b) { return std::memcmp(&a, &b, sizeof(double)) == 0; }

}  // namespace

TEST_CASE("degenerate gaussian returns its mean") {
  const Cloud c = gen_gaussian({Point(0.3, 0.8), 0.0, 1, 7});
  REQUIRE(c.size() == 1);
  CHECK((c[0] - Point(0.3, 0.8)).norm() < 1e-5);
  CHECK(gen_gaussian({Point(0.3, 0.8), 1e-30, 1, 7}) == c);
}

TEST_CASE("gaussian moments at n = 1e4") {
  const std::size_t n = 10000;
  const Cloud c = gen_gaussian({Point(0.5, 0.8), 0.04, n, 11});
  REQUIRE(c.size() == n);
  const auto m = moments(c);
  for (int k = 0; k < 2; ++k) {
    CHECK(std::abs(m.mean[k] - Point(0.5, 0.8)[k]) < 3.0 * 0.2 / std::sqrt(double(n)));
    CHECK(std::abs(m.var[k] - 0.04) < 0.05 * 0.04);
  }
}

TEST_CASE("gaussian: seeds are deterministic and distinct") {
  const GaussianSpec a{Point(0.5, 0.8), 0.04, 10000, 1}, b{Point(0.5, 0.8), 0.04, 10000, 2};
  const Cloud ca = gen_gaussian(a), cb = gen_gaussian(b);
  CHECK(ca == gen_gaussian(a));
  std::size_t shared = 0;
  for (std::size_t i = 0; i < ca.size(); ++i) shared += ca[i] == cb[i];
  CHECK(shared == 0);
  const auto ma = moments(ca), mb = moments(cb);
  // Difference of two independent means: sd = 0.2 * sqrt(2 / n).
  for (int k = 0; k < 2; ++k) CHECK(std::abs(ma.mean[k] - mb.mean[k]) < 4.0 * 0.2 * std::sqrt(2.0 / 10000));
}

TEST_CASE("synthetic suite") {
  const auto s = make_synthetic_suite(3);
  CHECK(s.pretrain.size() == 20000);
  CHECK(s.desirable.size() == 5000);
  CHECK(s.undesirable.size() == 5000);
  for (const auto& x : s.desirable) CHECK(x.w == 1);
  for (const auto& x : s.undesirable) CHECK(x.w == -1);
  Cloud d, u;
  for (const auto& x : s.desirable) d.push_back(x.x0);
  for (const auto& x : s.undesirable) u.push_back(x.x0);
  const double tol = 4.0 * 0.1 / std::sqrt(5000.0);
  CHECK((moments(d).mean - Point(0.3, 0.8)).cwiseAbs().maxCoeff() < tol);
  CHECK((moments(u).mean - Point(0.3, 0.6)).cwiseAbs().maxCoeff() < tol);
  CHECK((moments(s.pretrain).mean - Point(0.5, 0.8)).cwiseAbs().maxCoeff() < 4.0 * 0.2 / std::sqrt(20000.0));
  const auto labeled = s.labeled();
  CHECK(labeled.size() == 10000);
  CHECK(labeled.front().w == 1);
  CHECK(labeled.back().w == -1);
  CHECK(make_synthetic_suite(3).pretrain == s.pretrain);
  CHECK(make_synthetic_suite(4).pretrain != s.pretrain);
}

TEST_CASE("partition rules on the two-pair example") {
  const std::vector<PreferencePairRecord> pairs = {{"p", "A", "B"}, {"p", "B", "C"}};
  const std::vector<BinaryFeedbackRecord> alo = {{"A", 1}, {"B", 1}, {"C", -1}};
  const std::vector<BinaryFeedbackRecord> wo = {{"A", 1}, {"B", -1}, {"C", -1}};
  CHECK(partition_at_least_once(pairs) == alo);
  CHECK(partition_win_only(pairs) == wo);
  CHECK(partition_at_least_once({}).empty());
  CHECK(partition_win_only({}).empty());
}

TEST_CASE("a sample that only wins is desirable under both rules") {
  const std::vector<PreferencePairRecord> pairs = {{"1", "W", "x"}, {"2", "W", "y"}, {"3", "W", "z"}};
  for (const auto& r : partition_win_only(pairs)) CHECK(r.w == (r.sample_id == "W" ? 1 : -1));
  for (const auto& r : partition_at_least_once(pairs)) CHECK(r.w == (r.sample_id == "W" ? 1 : -1));
}

TEST_CASE("a pair with winner == loser is rejected") {
  CHECK_THROWS_AS(partition_at_least_once({{"p", "A", "A"}}), UsageError);
}

TEST_CASE("partition rules match a set-based recount") {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    CAPTURE(seed);
    CHECK(testing::partition_matches_oracle(testing::random_pairs(seed)));
  }
}

TEST_CASE("many comparisons per prompt: counts match a recount") {
  // Few prompts, many images per prompt, some images compared repeatedly.
  Rng rng(77);
  std::vector<PreferencePairRecord> pairs;
  for (int prompt = 0; prompt < 30; ++prompt) {
    const int images = 2 + static_cast<int>(rng() % 4);
    for (int k = 0; k < 6; ++k) {
      const int a = static_cast<int>(rng() % images), b = static_cast<int>(rng() % images);
      if (a == b) continue;
      const std::string base = "img" + std::to_string(prompt) + "_";
      pairs.push_back({"prompt" + std::to_string(prompt), base + std::to_string(a), base + std::to_string(b)});
    }
  }
  const testing::PartitionOracle oracle(pairs);
  std::size_t good_alo = 0, good_wo = 0;
  for (const auto& r : partition_at_least_once(pairs)) good_alo += r.w == 1;
  for (const auto& r : partition_win_only(pairs)) good_wo += r.w == 1;
  std::size_t oracle_wo = 0;
  for (const auto& id : oracle.referenced) oracle_wo += oracle.win_only(id) == 1;
  CHECK(good_alo == oracle.winners.size());
  CHECK(good_wo == oracle_wo);
  CHECK(good_wo <= good_alo);
}

TEST_CASE("toy pair labeling") {
  const auto suite = make_synthetic_suite(5, {Point(0.5, 0.8), 0.04, Point(0.3, 0.8), Point(0.3, 0.6), 0.01, 10, 50, 50});
  const auto table = suite_sample_table(suite);
  CHECK(table.size() == 100);
  auto score = [](const Point& p) { return p.y(); };
  Rng rng(6);
  const auto pairs = label_pairs(table, 300, score, rng);
  CHECK(pairs.size() == 300);
  for (const auto& p : pairs) {
    CHECK(p.winner_id != p.loser_id);
    CHECK(table.at(p.winner_id).y() > table.at(p.loser_id).y());
  }
  Rng again(6);
  const auto same = label_pairs(table, 300, score, again);
  CHECK(same.size() == pairs.size());
  CHECK(std::equal(pairs.begin(), pairs.end(), same.begin(), [](const auto& a, const auto& b) {
    return a.winner_id == b.winner_id && a.loser_id == b.loser_id;
  }));
  const auto labeled = to_labeled(partition_win_only(pairs), table);
  CHECK(labeled.size() == partition_win_only(pairs).size());
  CHECK_THROWS_AS(to_labeled({{"missing", 1}}, table), UsageError);
}

TEST_CASE("CSV round trips are bit-identical") {
  Rng rng(9);
  Cloud pts;
  for (int i = 0; i < 500; ++i) pts.emplace_back(standard_normal(rng) * 1e-7, standard_normal(rng) * 1e5);
  pts.emplace_back(0.1, 1.0 / 3.0);
  const auto pp = temp_file("points.csv");
  write_points_csv(pp, pts);
  const Cloud back = read_points_csv(pp);
  REQUIRE(back.size() == pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    CHECK(bit_equal(back[i].x(), pts[i].x()));
    CHECK(bit_equal(back[i].y(), pts[i].y()));
  }

  std::vector<LabeledSample> lab;
  for (std::size_t i = 0; i < pts.size(); ++i) lab.push_back({pts[i], i % 3 ? 1 : -1, Cond::none});
  const auto lp = temp_file("labeled.csv");
  write_labeled_csv(lp, lab);
  const auto lab_back = read_labeled_csv(lp);
  REQUIRE(lab_back.size() == lab.size());
  for (std::size_t i = 0; i < lab.size(); ++i) {
    CHECK(lab_back[i].x0 == lab[i].x0);
    CHECK(lab_back[i].w == lab[i].w);
  }
  CHECK(read_points_csv(lp).size() == lab.size());

  const auto pairs = testing::random_pairs(3);
  const auto pr = temp_file("pairs.csv");
  write_pairs_csv(pr, pairs);
  const auto pairs_back = read_pairs_csv(pr);
  REQUIRE(pairs_back.size() == pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    CHECK(pairs_back[i].prompt_id == pairs[i].prompt_id);
    CHECK(pairs_back[i].winner_id == pairs[i].winner_id);
    CHECK(pairs_back[i].loser_id == pairs[i].loser_id);
  }

  const std::map<std::string, Point> table = {{"a", Point(0.1, 0.2)}, {"b", Point(1.0 / 7.0, -3e-300)}};
  const auto tp = temp_file("table.csv");
  write_sample_table_csv(tp, table);
  CHECK(read_sample_table_csv(tp) == table);
  CHECK_THROWS_AS(write_sample_table_csv(tp, {{"a,b", Point::Zero()}}), UsageError);
  for (const auto& p : {pp, lp, pr, tp}) fs::remove(p);
}

TEST_CASE("CSV edge cases") {
  const auto p = temp_file("edge.csv");
  write_file(p, "x,y\n");
  CHECK(read_points_csv(p).empty());
  write_file(p, "x,y,w\n");
  CHECK(read_labeled_csv(p).empty());

  write_file(p, "x,y\n0.1,0.2\n0.3,0.4,1\n");
  try {
    read_points_csv(p);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line == 3);
    CHECK(std::string(e.what()).find(":3:") != std::string::npos);
  }
  write_file(p, "x,y,w\n0.1,0.2,1\n0.1,abc,1\n");
  try {
    read_labeled_csv(p);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line == 3);
  }
  write_file(p, "x,y,w\n0.1,0.2,0\n");
  CHECK_THROWS_AS(read_labeled_csv(p), ParseError);
  write_file(p, "a,b\n1,2\n");
  CHECK_THROWS_AS(read_points_csv(p), ParseError);
  write_file(p, "prompt_id,winner_id,loser_id\np,A,A\n");
  CHECK_THROWS_AS(read_pairs_csv(p), ParseError);
  write_file(p, "id,x,y\na,1,2\na,3,4\n");
  CHECK_THROWS_AS(read_sample_table_csv(p), ParseError);
  write_file(p, "x,y\r\n0.5,0.25\r\n");
  CHECK(read_points_csv(p) == Cloud{Point(0.5, 0.25)});
  fs::remove(p);
  CHECK_THROWS_AS(read_points_csv(temp_file("does_not_exist.csv")), IoError);
  CHECK_THROWS_AS(write_points_csv("/nonexistent/dir/x.csv", {}), IoError);
}
