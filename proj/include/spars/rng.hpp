// rng.hpp — seeded sub-stream derivation so every component draws from its
// own deterministic stream derived from the single top-level seed.
#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace spars {

// splitmix64 finalizer, used to decorrelate derived seeds.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d4a2b7e5d8c1f3ull;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

// Named sub-stream: substream(seed, "data"), substream(seed, "policy"), ...
inline std::mt19937_64 substream(std::uint64_t seed, std::string_view name) {
  return std::mt19937_64(mix64(seed ^ fnv1a(name)));
}

inline std::mt19937_64 substream(std::uint64_t seed, std::string_view name,
                                 std::uint64_t index) {
  return std::mt19937_64(mix64(mix64(seed ^ fnv1a(name)) + index));
}

}  // namespace spars
