#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <string_view>

namespace probeforge {

using Rng = std::mt19937_64;

/// Generator for an independent, named stream derived from a base seed.
/// Streams with different tags do not depend on each other's consumption.
Rng make_rng(std::uint64_t seed, std::string_view stream = {});

/// Uniform integer in [0, n) from raw generator output (rejection sampling),
/// so results do not depend on the standard library's distributions.
std::uint64_t uniform_index(Rng& rng, std::uint64_t n);

template <typename It>
void seeded_shuffle(It first, It last, Rng& rng) {
  const auto n = static_cast<std::uint64_t>(last - first);
  for (std::uint64_t i = n; i > 1; --i) {
    auto j = uniform_index(rng, i);
    std::iter_swap(first + (i - 1), first + j);
  }
}

}  // namespace probeforge
