#pragma once

#include <cmath>
#include <cstdint>

namespace cfscm {

// Counter-based generator: every draw is a pure function of
// (seed, stream, sample, slot), so batch sampling is order-independent
// and reproducible under parallel generation.
namespace rng {

inline std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t counter_hash(std::uint64_t seed, std::uint64_t stream,
                                  std::uint64_t sample, std::uint64_t slot) {
  std::uint64_t h = splitmix(seed ^ 0x2545f4914f6cdd1dULL);
  h = splitmix(h ^ stream);
  h = splitmix(h ^ sample);
  h = splitmix(h ^ slot);
  return h;
}

// Uniform in (0, 1): top 53 bits, offset so 0 is excluded.
inline double uniform01(std::uint64_t seed, std::uint64_t stream,
                        std::uint64_t sample, std::uint64_t slot) {
  std::uint64_t bits = counter_hash(seed, stream, sample, slot);
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

// Box-Muller; each slot consumes two underlying uniforms.
inline double normal(std::uint64_t seed, std::uint64_t stream,
                     std::uint64_t sample, std::uint64_t slot) {
  double u1 = uniform01(seed, stream, sample, 2 * slot);
  double u2 = uniform01(seed, stream, sample, 2 * slot + 1);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
}

inline double gumbel(std::uint64_t seed, std::uint64_t stream,
                     std::uint64_t sample, std::uint64_t slot) {
  return -std::log(-std::log(uniform01(seed, stream, sample, slot)));
}

}  // namespace rng

// One noise stream keyed to a (seed, stream, sample) triple; slot indexes
// the draws within it.
struct NoiseKey {
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
  std::uint64_t sample = 0;

  double uniform(std::uint64_t slot) const {
    return rng::uniform01(seed, stream, sample, slot);
  }
  double normal(std::uint64_t slot) const {
    return rng::normal(seed, stream, sample, slot);
  }
  double gumbel(std::uint64_t slot) const {
    // Offset region so gumbel and normal slots never alias.
    return rng::gumbel(seed, stream, sample, (1ULL << 32) + slot);
  }

  NoiseKey substream(std::uint64_t tag) const {
    return {seed, rng::splitmix(stream ^ tag), sample};
  }
};

}  // namespace cfscm
