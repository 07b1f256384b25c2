#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace cbe {

/// Lowercase hex SHA-256 digest.
std::string sha256_hex(std::string_view data);

/// 64-bit FNV-1a; used to derive independent, stable RNG streams from a seed.
constexpr std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream) {
  return fnv1a(stream, 0xcbf29ce484222325ULL ^ (seed * 0x9E3779B97F4A7C15ULL));
}

}  // namespace cbe
