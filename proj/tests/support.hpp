// SPDX-License-Identifier: Apache-2.0
//
// Helpers shared by the unit tests and the acceptance runner.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "dkto/alignment.hpp"
#include "dkto/datasets.hpp"
#include "dkto/ddpm.hpp"
#include "dkto/rng.hpp"

namespace dkto::testing {

inline DenoiserArch small_arch() {
  DenoiserArch a;
  a.hidden = {8, 6};
  a.activation = Activation::silu;
  a.embedding = {4, 10000.0};
  return a;
}

inline DenoiserModel small_model(std::uint64_t seed, bool with_cond = false) {
  Rng rng(seed);
  DenoiserModel m = make_denoiser(small_arch(), ScheduleSpec{}, rng);
  if (with_cond) add_cond_vocab(m);
  return m;
}

// Copy of `m` with i.i.d. N(0, scale^2) added to every parameter, including
// biases and the condition table.
inline DenoiserModel perturbed(const DenoiserModel& m, double scale, std::uint64_t seed) {
  DenoiserModel out = m;
  Rng rng(seed);
  for (auto& view : tensor_views(out))
    for (double& v : view.data) v += scale * standard_normal(rng);
  return out;
}

struct GradcheckResult {
  std::size_t probed = 0;
  std::size_t failures = 0;
  double max_rel_error = 0.0;
  std::string worst;
};

// Central differences at `probes` random parameter coordinates. The relative
// error is |a - n| / max(|a|, |n|); coordinates where both are below
// `abs_floor` are compared absolutely against rel_tol * abs_floor.
inline GradcheckResult gradcheck(DenoiserModel model, const ModelGradient& analytic,
                                 const std::function<double(const DenoiserModel&)>& loss, std::size_t probes,
                                 std::uint64_t seed, double h = 1e-4, double rel_tol = 1e-4,
                                 double abs_floor = 1e-7) {
  auto params = tensor_views(model);
  const auto grads = tensor_views(analytic);
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t k = 0; k < params.size(); ++k)
    for (std::size_t i = 0; i < params[k].data.size(); ++i) coords.emplace_back(k, i);
  Rng rng(seed);
  std::shuffle(coords.begin(), coords.end(), rng);
  coords.resize(std::min(probes, coords.size()));

  GradcheckResult r;
  for (const auto& [k, i] : coords) {
    double& p = params[k].data[i];
    const double saved = p;
    p = saved + h;
    const double up = loss(model);
    p = saved - h;
    const double down = loss(model);
    p = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double a = grads[k].data[i];
    const double scale = std::max(std::abs(a), std::abs(numeric));
    const double err = scale < abs_floor ? std::abs(a - numeric) / abs_floor : std::abs(a - numeric) / scale;
    ++r.probed;
    if (err >= rel_tol) ++r.failures;
    if (err > r.max_rel_error) {
      r.max_rel_error = err;
      r.worst = params[k].name + "[" + std::to_string(i) + "] analytic " + std::to_string(a) + " numeric " +
                std::to_string(numeric);
    }
  }
  return r;
}

inline std::vector<Point> random_points(std::size_t n, std::uint64_t seed, double scale = 0.3) {
  Rng rng(seed);
  std::vector<Point> out;
  for (std::size_t i = 0; i < n; ++i) out.emplace_back(0.4 + scale * standard_normal(rng), 0.7 + scale * standard_normal(rng));
  return out;
}

inline std::vector<LabeledSample> random_labeled(std::size_t n, std::uint64_t seed) {
  const auto pts = random_points(n, seed);
  Rng rng(seed + 1);
  std::vector<LabeledSample> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back({pts[i], (rng() & 1) ? 1 : -1, Cond::none});
  return out;
}

// Set-based recount of both partition rules.
struct PartitionOracle {
  std::set<std::string> referenced, winners, losers;

  explicit PartitionOracle(const std::vector<PreferencePairRecord>& pairs) {
    for (const auto& p : pairs) {
      winners.insert(p.winner_id);
      losers.insert(p.loser_id);
      referenced.insert(p.winner_id);
      referenced.insert(p.loser_id);
    }
  }
  int at_least_once(const std::string& id) const { return winners.count(id) ? 1 : -1; }
  int win_only(const std::string& id) const { return winners.count(id) && !losers.count(id) ? 1 : -1; }
};

// Random comparisons among at most `max_samples` ids.
inline std::vector<PreferencePairRecord> random_pairs(std::uint64_t seed, std::size_t max_samples = 50) {
  Rng rng(seed);
  const std::size_t samples = 2 + rng() % (max_samples - 1);
  const std::size_t count = rng() % 120;
  std::uniform_int_distribution<std::size_t> pick(0, samples - 1);
  std::vector<PreferencePairRecord> pairs;
  while (pairs.size() < count) {
    const auto a = pick(rng), b = pick(rng);
    if (a == b) continue;
    pairs.push_back({"p" + std::to_string(pairs.size()), "s" + std::to_string(a), "s" + std::to_string(b)});
  }
  return pairs;
}

// True when both rules agree with the oracle, every referenced id is
// labeled exactly once, and win-only desirables are a subset of
// at-least-once desirables.
inline bool partition_matches_oracle(const std::vector<PreferencePairRecord>& pairs) {
  const PartitionOracle oracle(pairs);
  const auto alo = partition_at_least_once(pairs);
  const auto wo = partition_win_only(pairs);
  if (alo.size() != oracle.referenced.size() || wo.size() != oracle.referenced.size()) return false;
  std::set<std::string> seen_alo, seen_wo, good_alo, good_wo;
  for (const auto& r : alo) {
    if (!seen_alo.insert(r.sample_id).second || r.w != oracle.at_least_once(r.sample_id)) return false;
    if (r.w == 1) good_alo.insert(r.sample_id);
  }
  for (const auto& r : wo) {
    if (!seen_wo.insert(r.sample_id).second || r.w != oracle.win_only(r.sample_id)) return false;
    if (r.w == 1) good_wo.insert(r.sample_id);
  }
  return seen_alo == oracle.referenced && seen_wo == oracle.referenced &&
         std::includes(good_alo.begin(), good_alo.end(), good_wo.begin(), good_wo.end());
}

}  // namespace dkto::testing
