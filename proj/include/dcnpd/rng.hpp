#pragma once

#include <cstdint>
#include <random>

namespace dcnpd {

/// The single random-stream type threaded through every stochastic operation.
using Rng = std::mt19937_64;

/// SplitMix64 finalizer. Used to derive independent child seeds.
constexpr std::uint64_t mix_seed(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Child seed for stream `index` under `master`. Depends only on the pair, so
/// adding streams never perturbs existing ones.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) noexcept {
  return mix_seed(mix_seed(master) ^ mix_seed(index + 0x632be59bd9b4e019ULL));
}

// Named sub-streams of a repetition seed.
enum class Stream : std::uint64_t { Data = 1, Split = 2, Propensity = 3, Model = 4, Inference = 5 };

inline Rng make_rng(std::uint64_t seed, Stream s) {
  return Rng(derive_seed(seed, static_cast<std::uint64_t>(s)));
}

/// Uniform draw on [0, 1). Bernoulli(keep) is `uniform01(rng) < keep`, so keep = 1 always keeps.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace dcnpd
