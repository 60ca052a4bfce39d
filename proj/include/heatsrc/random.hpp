#ifndef HEATSRC_RANDOM_HPP
#define HEATSRC_RANDOM_HPP

#include <cstdint>
#include <random>

namespace heatsrc {

using Rng = std::mt19937_64;

/// Independent stream derived from the master seed and a (purpose, index) tag.
inline Rng make_stream(std::uint64_t seed, std::uint64_t purpose, std::uint64_t index = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(purpose), static_cast<std::uint32_t>(index)};
  return Rng(seq);
}

namespace stream {
inline constexpr std::uint64_t kChain = 1;
inline constexpr std::uint64_t kSwap = 2;
inline constexpr std::uint64_t kSynthesis = 3;
inline constexpr std::uint64_t kMixture = 4;
}  // namespace stream

}  // namespace heatsrc

#endif  // HEATSRC_RANDOM_HPP
