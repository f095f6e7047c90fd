#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace glyphsim {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to fan one root seed out into independent streams.
constexpr uint64_t mix_seed(uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

constexpr uint64_t derive_seed(uint64_t root, std::string_view stream) {
  uint64_t h = 0xCBF29CE484222325ull;  // FNV-1a
  for (char c : stream) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ull;
  }
  return mix_seed(root ^ h);
}

constexpr uint64_t derive_seed(uint64_t root, std::string_view stream, uint64_t index) {
  return mix_seed(derive_seed(root, stream) + index);
}

}  // namespace glyphsim
