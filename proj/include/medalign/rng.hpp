#pragma once

#include <cstdint>
#include <random>

namespace medalign {

using Rng = std::mt19937_64;

// Named random streams. Every consumer of randomness derives its own engine
// from (seed, stream, step) so that results do not depend on call order and
// a resumed run reproduces the exact draws of an uninterrupted one.
enum class Stream : std::uint32_t {
  Init = 1,
  Sampler = 2,
  Augment = 3,
  Synthetic = 4,
  Prompts = 5,
  Probe = 6,
  Test = 99,
};

inline Rng derive_rng(std::uint64_t seed, Stream stream, std::uint64_t step = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(step),
                    static_cast<std::uint32_t>(step >> 32)};
  return Rng(seq);
}

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

}  // namespace medalign
