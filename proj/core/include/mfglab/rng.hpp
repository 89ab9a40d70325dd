#pragma once

#include <cmath>
#include <cstdint>

namespace mfg {

// Counter-based Gaussian noise. Every variate is a pure function of
// (seed, purpose, rep, agent, path, step, component), so simulations are
// bit-identical no matter how work is scheduled across threads, and
// distinct purposes/agents/paths get independent streams.
//
// The generator hashes the counter tuple through iterated splitmix64
// finalizer rounds (a well-mixed 64-bit permutation) and feeds two derived
// 64-bit words into Box-Muller.
namespace rng_detail {

inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t combine(std::uint64_t h, std::uint64_t v) {
  return mix64(h ^ (v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2)));
}

}  // namespace rng_detail

// Stream purposes keep logically distinct noise sources independent even
// when they share (rep, agent, path, step) counters.
enum class NoisePurpose : std::uint64_t {
  kObservable = 1,    // W_i increments
  kUnobservable = 2,  // W-tilde increments
};

struct NoiseKey {
  std::uint64_t seed = 0;
  NoisePurpose purpose = NoisePurpose::kObservable;
  std::uint64_t rep = 0;
  std::uint64_t agent = 0;
  std::uint64_t path = 0;
  std::uint64_t step = 0;
  std::uint64_t component = 0;
};

inline std::uint64_t hash_key(const NoiseKey& key) {
  using rng_detail::combine;
  std::uint64_t h = rng_detail::mix64(key.seed ^ 0x6d666c61625f6e6bULL);
  h = combine(h, static_cast<std::uint64_t>(key.purpose));
  h = combine(h, key.rep);
  h = combine(h, key.agent);
  h = combine(h, key.path);
  h = combine(h, key.step);
  h = combine(h, key.component);
  return h;
}

// Standard normal variate for the given counter key (Box-Muller).
inline double standard_normal(const NoiseKey& key) {
  const std::uint64_t h = hash_key(key);
  const std::uint64_t h2 = rng_detail::mix64(h ^ 0x5851f42d4c957f2dULL);
  // u1 in (0, 1] so the log never sees zero; u2 in [0, 1).
  const double u1 =
      (static_cast<double>(h >> 11) + 1.0) * 0x1.0p-53;
  const double u2 = static_cast<double>(h2 >> 11) * 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * 3.14159265358979323846 * u2);
}

// Brownian increment over one step of size dt.
inline double brownian_increment(const NoiseKey& key, double dt) {
  return std::sqrt(dt) * standard_normal(key);
}

}  // namespace mfg
