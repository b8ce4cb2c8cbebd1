#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace cfsim {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Sub-seed for a named component (optionally indexed). Hash-based, so adding
// a new component never perturbs the streams of existing ones.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view component,
                                 std::uint64_t index = 0) {
  return splitmix64(seed ^ splitmix64(fnv1a(component) + index * 0x632be59bd9b4e019ULL));
}

inline Rng make_rng(std::uint64_t seed, std::string_view component, std::uint64_t index = 0) {
  return Rng(derive_seed(seed, component, index));
}

}  // namespace cfsim
