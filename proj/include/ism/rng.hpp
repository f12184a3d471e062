#pragma once

#include <cstdint>
#include <random>

namespace ism {

using Rng = std::mt19937_64;

/// Independent generator for (seed, stream, index). Used so that every
/// training step and every OT pool can be replayed without carrying
/// generator state across a checkpoint.
inline Rng derive_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return Rng(seq);
}

namespace streams {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kPool = 2;
inline constexpr std::uint64_t kStep = 3;
inline constexpr std::uint64_t kHeldOut = 4;
inline constexpr std::uint64_t kSample = 5;
inline constexpr std::uint64_t kProbe = 6;
}  // namespace streams

}  // namespace ism
