#pragma once

#include <algorithm>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace cadis {

using Rng = std::mt19937_64;

// SplitMix64 finalizer. Used to derive independent sub-streams from a master
// seed by counter, so that the derived seed depends only on the path
// (master, round, client, ...) and never on execution order.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed,
                                    std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = mix64(seed);
  for (std::uint64_t p : path) s = mix64(s ^ mix64(p + 0x632be59bd9b4e019ULL));
  return s;
}

// Stream tags keep the different consumers of a round seed apart.
enum class Stream : std::uint64_t {
  kInit = 1,
  kSampling = 2,
  kClient = 3,
  kTransitive = 4,
  kPartition = 5,
  kData = 6,
};

inline Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> path = {}) {
  return Rng(derive_seed(seed, path));
}

// Uniform double in [0,1) built from the top 53 bits; unlike
// std::uniform_real_distribution its output is fixed by the standard
// engine sequence alone.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Uniform integer in [0, n) by rejection, libstdc++-independent.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t r;
  do {
    r = rng();
  } while (r >= limit);
  return r % n;
}

// Box-Muller; one fresh pair per call so the draw count is fixed.
double standard_normal(Rng& rng);

template <typename It>
void shuffle(It first, It last, Rng& rng) {
  const auto n = static_cast<std::uint64_t>(last - first);
  for (std::uint64_t i = n; i > 1; --i) {
    const auto j = uniform_index(rng, i);
    std::iter_swap(first + (i - 1), first + j);
  }
}

}  // namespace cadis
