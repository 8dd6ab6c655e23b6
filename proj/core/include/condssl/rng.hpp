#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace condssl {

using Rng = std::mt19937_64;

// Derives an independent stream seed from a base seed and a list of tags
// (fold index, arm index, purpose code). Same inputs give the same seed.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) {
  std::uint64_t h = base;
  for (std::uint64_t t : tags) {
    std::seed_seq mix{static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32),
                      static_cast<std::uint32_t>(t), static_cast<std::uint32_t>(t >> 32)};
    std::uint32_t out[2];
    mix.generate(out, out + 2);
    h = (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
  }
  return h;
}

inline Rng make_rng(std::uint64_t base, std::initializer_list<std::uint64_t> tags = {}) {
  return Rng(derive_seed(base, tags));
}

}  // namespace condssl
