#pragma once

#include <cstdint>
#include <string_view>

namespace skna {

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// FNV-1a, stable across platforms unlike std::hash.
constexpr std::uint64_t hash_string(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ull;
  }
  return h;
}

// Seed for an independent job: seed XOR hash(subject, index).
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view subject, std::uint64_t index) {
  return seed ^ mix64(hash_string(subject) + mix64(index));
}

}  // namespace skna
