#pragma once

#include <cstdint>

namespace fedprog {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Derives an independent stream id from a base seed and salts.
inline std::uint64_t derive_stream(std::uint64_t seed, std::uint64_t a,
                                   std::uint64_t b = 0) {
  std::uint64_t h = splitmix64(seed ^ 0xA076'1D64'78BD'642Full);
  h = splitmix64(h ^ a);
  return splitmix64(h ^ b);
}

}  // namespace fedprog
