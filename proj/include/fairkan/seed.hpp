#pragma once

#include <cstdint>
#include <string_view>

namespace fairkan {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed for a named phase of a run; independent of which other phases exist.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view label, std::uint64_t a = 0,
                                 std::uint64_t b = 0) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return splitmix64(splitmix64(splitmix64(root ^ h) + a) + b);
}

}  // namespace fairkan
