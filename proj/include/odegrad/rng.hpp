#pragma once

#include <cstdint>
#include <random>

namespace odegrad {

// splitmix64 finalizer; decorrelates nearby seeds.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Per-cell stream: a run seed combined with a cell index. Parallel sweeps
// derive their RNG this way so thread count never changes results.
inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  return std::mt19937_64(mix64(mix64(seed) ^ mix64(stream + 0x51ed270b0a1ULL)));
}

}  // namespace odegrad
