#include "probeforge/random.hpp"

#include <limits>
#include <vector>

namespace probeforge {

Rng make_rng(std::uint64_t seed, std::string_view stream) {
  // FNV-1a over the tag keeps the seed sequence stable across platforms.
  std::uint64_t tag = 1469598103934665603ULL;
  for (unsigned char c : stream) {
    tag ^= c;
    tag *= 1099511628211ULL;
  }
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(tag >> 32)};
  return Rng(seq);
}

std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  if (n <= 1) return 0;
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % n;
}

}  // namespace probeforge
