#include "gcdt/numerics/rng.h"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace gcdt::num {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream_id) {
  return splitmix64(seed ^ splitmix64(stream_id + 0x9E3779B97F4A7C15ULL));
}

Pcg32::Pcg32(std::uint64_t seed, std::uint64_t stream) : seed_(seed) { init(splitmix64(seed), stream); }

Pcg32 Pcg32::from_raw(std::uint64_t initstate, std::uint64_t initseq) {
  Pcg32 g;
  g.seed_ = initstate;
  g.init(initstate, initseq);
  return g;
}

void Pcg32::init(std::uint64_t initstate, std::uint64_t initseq) {
  inc_ = (initseq << 1u) | 1u;
  state_ = 0;
  next_u32();
  state_ += initstate;
  next_u32();
}

std::uint32_t Pcg32::next_u32() {
  const std::uint64_t old = state_;
  state_ = old * 6364136223846793005ULL + inc_;
  const auto xorshifted = static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
  const auto rot = static_cast<std::uint32_t>(old >> 59u);
  return (xorshifted >> rot) | (xorshifted << ((0u - rot) & 31u));
}

std::uint32_t Pcg32::uniform_int(std::uint32_t bound) {
  if (bound == 0) throw std::invalid_argument("Pcg32::uniform_int: bound must be positive");
  const std::uint32_t threshold = (0u - bound) % bound;
  for (;;) {
    const std::uint32_t r = next_u32();
    if (r >= threshold) return r % bound;
  }
}

double Pcg32::uniform() {
  const std::uint64_t a = next_u32() >> 5;  // 27 bits
  const std::uint64_t b = next_u32() >> 6;  // 26 bits
  return static_cast<double>(a * 67108864ULL + b) * (1.0 / 9007199254740992.0);
}

double Pcg32::normal() {
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Pcg32 Pcg32::substream(std::uint64_t stream_id) const {
  return Pcg32(mix_seed(seed_, stream_id), stream_id);
}

}  // namespace gcdt::num
