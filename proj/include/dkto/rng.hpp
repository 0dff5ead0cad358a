// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace dkto {

using Rng = std::mt19937_64;

// Named substream split of a run seed: splitmix64(seed ^ fnv1a64(name)).
// Each stage (data, init, pretrain, align, sample, ...) draws from its own
// stream so that changing one stage's consumption never shifts another's.
std::uint64_t derive_seed(std::uint64_t run_seed, std::string_view stream_name);

inline Rng make_rng(std::uint64_t run_seed, std::string_view stream_name) {
  return Rng(derive_seed(run_seed, stream_name));
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL);

inline double standard_normal(Rng& rng) {
  return std::normal_distribution<double>(0.0, 1.0)(rng);
}

}  // namespace dkto
