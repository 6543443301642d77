#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace posefield {

// Deterministic RNG used everywhere instead of <random> engines/distributions:
// the standard distributions are implementation-defined, which would break
// cross-platform reproducibility of seeds, checkpoints and golden tests.
// xoshiro256** for the stream, splitmix64 for seeding and stream splitting.
class Rng {
 public:
  Rng() : Rng(0) {}
  explicit Rng(uint64_t seed) {
    uint64_t x = seed;
    for (auto& s : state_) s = splitmix64(x);
  }

  static uint64_t splitmix64(uint64_t& x) {
    x += 0x9e3779b97f4a7c15ull;
    uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1) with 53 bits of mantissa.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Integer in [0, n).
  uint64_t below(uint64_t n) { return next_u64() % n; }

  // Standard normal via Box-Muller (fully portable, no cached spare so the
  // stream position is a pure function of the call count).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Independent child stream. Streams are split by hashing the parent seed
  // material with a purpose tag, so adding a new consumer never shifts the
  // draws of existing ones.
  Rng split(uint64_t tag) const {
    uint64_t x = state_[0] ^ rotl(state_[2], 13) ^ (tag * 0x9e3779b97f4a7c15ull);
    return Rng(splitmix64(x));
  }

  std::array<uint64_t, 4>& state() { return state_; }
  const std::array<uint64_t, 4>& state() const { return state_; }

 private:
  static uint64_t rotl(uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }
  std::array<uint64_t, 4> state_{};
};

// Stable per-item stream (e.g. per (step, ray)): independent of thread count
// and iteration order.
inline Rng item_rng(uint64_t seed, uint64_t a, uint64_t b = 0) {
  uint64_t x = seed ^ (a * 0xd1342543de82ef95ull) ^ (b * 0xaf251af3b0f025b5ull);
  return Rng(Rng::splitmix64(x));
}

}  // namespace posefield
