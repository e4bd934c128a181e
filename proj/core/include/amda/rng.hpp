#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace amda {

/// SplitMix64 finalizer; used to whiten seed material.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Combines seed words into one stream key. Independent streams are derived
/// by varying any word, so skipping a consumer never shifts another one.
inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t a,
                                 std::uint64_t b = 0, std::uint64_t c = 0) {
  std::uint64_t h = mix64(root);
  h = mix64(h ^ a);
  h = mix64(h ^ b);
  h = mix64(h ^ c);
  return h;
}

inline std::mt19937_64 make_rng(std::uint64_t seed) {
  return std::mt19937_64(seed);
}

/// Uniform draw in [0, n) by rejection sampling, so results depend only on
/// the engine's bit stream, never on standard-library distribution
/// internals.
inline std::uint64_t bounded_uint(std::mt19937_64& rng, std::uint64_t n) {
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % n;
}

/// Uniform double in [0, 1) from the engine's top 53 bits.
inline double uniform_double(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Standard normal via the Box-Muller transform, one value per call, two
/// engine draws consumed. Chosen over std::normal_distribution for the
/// same portability reason as bounded_uint.
inline double gaussian(std::mt19937_64& rng) {
  const double u1 = static_cast<double>((rng() >> 11) + 1) * 0x1.0p-53; // (0,1]
  const double u2 = uniform_double(rng);
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * 3.141592653589793238462643383279502884 * u2);
}

} // namespace amda
