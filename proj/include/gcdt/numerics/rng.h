#pragma once

#include <cstdint>

namespace gcdt::num {

/// SplitMix64 finalizer. Used to spread seeds before they reach PCG32.
std::uint64_t splitmix64(std::uint64_t x);

/// Derives a child seed from a parent seed and a substream id:
///   mix_seed(s, k) = splitmix64(s ^ splitmix64(k + 0x9E3779B97F4A7C15)).
/// Every reproducible fan-out in the toolkit (per-episode reset seeds,
/// per-objective samplers, initialization) goes through this function.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream_id);

/// PCG32 (XSH-RR 64/32) as published by O'Neill. Seeding follows the
/// reference `pcg32_srandom_r(initstate = splitmix64(seed), initseq = stream)`.
class Pcg32 {
 public:
  explicit Pcg32(std::uint64_t seed = 0, std::uint64_t stream = 0);
  /// Reference seeding without the SplitMix64 step.
  static Pcg32 from_raw(std::uint64_t initstate, std::uint64_t initseq);

  std::uint32_t next_u32();
  /// Uniform in [0, bound). bound must be > 0.
  std::uint32_t uniform_int(std::uint32_t bound);
  /// Uniform double in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller (one draw per call, no caching).
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

  /// Independent generator for `stream_id`, derived from this generator's
  /// construction seed only (not its current position).
  Pcg32 substream(std::uint64_t stream_id) const;

  std::uint64_t seed() const { return seed_; }

 private:
  void init(std::uint64_t initstate, std::uint64_t initseq);

  std::uint64_t seed_;
  std::uint64_t state_ = 0;
  std::uint64_t inc_ = 1;
};

}  // namespace gcdt::num
