#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace anprompt {

/// Independent stream for (seed, tags...). Used to split one master seed
/// into per-epoch / per-class generators so work order does not matter.
inline std::mt19937_64 derive_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
  std::vector<std::uint32_t> words{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  for (auto t : tags) {
    words.push_back(static_cast<std::uint32_t>(t));
    words.push_back(static_cast<std::uint32_t>(t >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

/// True when ANPROMPT_DETERMINISTIC=1 asks for single-threaded kernels.
bool deterministic_mode();

}  // namespace anprompt
