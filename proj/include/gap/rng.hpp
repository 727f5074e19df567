#pragma once

#include <cstdint>
#include <random>

namespace gap {

using Rng = std::mt19937_64;

/// splitmix64 finaliser; mixes a (seed, stream) pair into an independent seed.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream) { return Rng(derive_seed(seed, stream)); }

// Named streams so that changing one consumer never shifts another.
namespace streams {
inline constexpr std::uint64_t kInit = 0;
inline constexpr std::uint64_t kTrainTasks = 1;
inline constexpr std::uint64_t kEvalTasks = 2;
inline constexpr std::uint64_t kVerify = 3;
}  // namespace streams

}  // namespace gap
