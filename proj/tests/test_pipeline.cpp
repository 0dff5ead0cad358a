// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <set>

#include "dkto/checkpoint.hpp"
#include "dkto/errors.hpp"
#include "dkto/pipeline.hpp"
#include "support.hpp"

using namespace dkto;

namespace {

ConfigValues small_values() {
  ConfigValues v;
  v.set("data.pretrain_count", "2000");
  v.set("data.desirable_count", "300");
  v.set("data.undesirable_count", "300");
  v.set("data.pair_count", "400");
  v.set("model.hidden", "32,32");
  v.set("model.time_embed_dim", "16");
  v.set("pretrain.steps", "1500");
  v.set("sample.n", "1000");
  return v;
}

}  // namespace

TEST_CASE("alignment data under each feedback mode") {
  ConfigValues v = small_values();
  const RunConfig direct = resolve(v);
  const auto suite = build_suite(direct);
  CHECK(alignment_data(direct, suite).size() == 600);

  for (const char* mode : {"at_least_once", "win_only"}) {
    CAPTURE(mode);
    v.set("data.feedback", mode);
    const RunConfig cfg = resolve(v);
    const auto data = alignment_data(cfg, suite);
    CHECK(!data.empty());
    CHECK(data.size() <= 600);
    std::set<std::pair<double, double>> seen;
    for (const auto& s : data) CHECK(seen.insert({s.x0.x(), s.x0.y()}).second);
    CHECK(std::any_of(data.begin(), data.end(), [](const auto& s) { return s.w == 1; }));
    CHECK(std::any_of(data.begin(), data.end(), [](const auto& s) { return s.w == -1; }));
    CHECK(alignment_data(cfg, suite).size() == data.size());
  }
}

TEST_CASE("condition resolution") {
  const DenoiserModel plain = testing::small_model(1);
  const DenoiserModel cond = testing::small_model(1, true);
  CHECK(resolve_cond("auto", plain) == Cond::none);
  CHECK(resolve_cond("auto", cond) == Cond::good);
  CHECK(resolve_cond("bad", cond) == Cond::bad);
  CHECK_THROWS_AS(resolve_cond("good", plain), ConfigError);
  CHECK_THROWS_AS(resolve_cond("great", cond), UsageError);
}

TEST_CASE("stage seeds are independent of stage order") {
  const RunConfig cfg = resolve(small_values());
  const DenoiserModel a = init_model(cfg);
  (void)build_suite(cfg);
  const DenoiserModel b = init_model(cfg);
  const auto va = tensor_views(a), vb = tensor_views(b);
  for (std::size_t i = 0; i < va.size(); ++i) CHECK(std::equal(va[i].data.begin(), va[i].data.end(), vb[i].data.begin()));
}

TEST_CASE("csft: the good token samples score higher than the bad token") {
  ConfigValues v = small_values();
  v.set("align.objective", "csft");
  v.set("align.batch_size", "256");
  v.set("align.kl_batch", "256");
  v.set("align.steps", "400");
  v.set("align.lr", "0.001");
  const RunConfig cfg = resolve(v);
  const auto suite = build_suite(cfg);
  DenoiserModel ref = init_model(cfg);
  run_pretrain(ref, cfg, suite);
  DenoiserModel theta = ref;
  const auto log = run_align(theta, ref, cfg, alignment_data(cfg, suite));
  CHECK(log.undesirable_consumed > 0);
  REQUIRE(theta.has_cond());

  RunConfig good = cfg, bad = cfg;
  good.sample_cond = "good";
  bad.sample_cond = "bad";
  const auto rg = eval_cloud(run_sample(theta, good), cfg.reference());
  const auto rb = eval_cloud(run_sample(theta, bad), cfg.reference());
  MESSAGE("good score " << rg.desirable_score_mean << " bad score " << rb.desirable_score_mean);
  CHECK(rg.desirable_score_mean > rb.desirable_score_mean);
  CHECK(run_sample(theta, good) != run_sample(theta, bad));
}

TEST_CASE("manifest lists outputs and refuses missing ones") {
  const ConfigValues v = small_values();
  const RunConfig cfg = resolve(v);
  const auto dir = std::filesystem::temp_directory_path() / "dkto_manifest_test";
  std::filesystem::create_directories(dir);
  RunManifest m("test", v, cfg);
  write_points_csv(dir / "pts.csv", {Point(1, 2)});
  m.add_output("points", dir / "pts.csv");
  write_manifest(dir / "manifest.json", m);
  const auto j = read_json_file(dir / "manifest.json");
  CHECK(j["format"] == "dkto-run-manifest");
  CHECK(j["config_hash"] == v.hash());
  CHECK(j["status"] == "ok");
  CHECK(!j["finished"].get<std::string>().empty());
  m.add_output("missing", dir / "nope.csv");
  CHECK_THROWS_AS(write_manifest(dir / "manifest2.json", m), IoError);
  std::filesystem::remove_all(dir);
}
