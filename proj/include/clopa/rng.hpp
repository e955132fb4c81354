#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace clopa {

using Rng = std::mt19937_64;

/// SplitMix64 finaliser.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Deterministic seed for a stream identified by a tuple of integers,
/// e.g. (run seed, sample id, step).
constexpr std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x5851f42d4c957f2dULL;
  for (auto p : parts) h = mix64(h ^ mix64(p));
  return h;
}

inline Rng make_rng(std::initializer_list<std::uint64_t> parts) { return Rng(derive_seed(parts)); }

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

}  // namespace clopa
