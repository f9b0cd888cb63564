#pragma once

#include <cstdint>
#include <random>

namespace calpha {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Independent stream keyed by (master seed, replication index, stream tag).
/// The stream depends only on the key, never on scheduling order.
inline Rng make_stream(std::uint64_t master, std::uint64_t index, std::uint64_t tag = 0) {
  const std::uint64_t key = mix64(mix64(mix64(master) ^ index) ^ (tag * 0xd1b54a32d192ed03ULL));
  std::seed_seq seq{static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(tag)};
  return Rng(seq);
}

}  // namespace calpha
