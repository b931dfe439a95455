#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace xvt {

// Splitmix-style generator. Every stochastic operation in the library draws
// from an Rng that is ultimately derived from one integer seed, so whole runs
// replay bit-identically. Independent streams (init, shuffling, dropout,
// per-sample generation) are derived by hashing (seed, stream ids...), which
// keeps parallel or resumed consumers order-independent.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(mix64(seed ^ kGamma)) {}

  std::uint64_t next_u64() {
    state_ += kGamma;
    return mix64(state_);
  }

  // Uniform in [0, 1), 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller. Uses two fresh uniforms per draw; no cached spare, so the
  // stream position is a pure function of the draw count.
  double gaussian() {
    const double u1 = 1.0 - uniform();  // (0, 1]: keeps log finite
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // Uniform integer in [0, n) via 128-bit multiply (no modulo bias to speak
  // of for the n used here).
  int uniform_int(int n) {
    return static_cast<int>(
        (static_cast<unsigned __int128>(next_u64()) * static_cast<unsigned __int128>(n)) >> 64);
  }

  bool bernoulli(double p) { return uniform() < p; }

  static std::uint64_t mix64(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ull;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBull;
    z ^= z >> 31;
    return z;
  }

  // Derived stream: hash-combines the seed with a list of stream/context ids.
  static Rng derive(std::uint64_t seed, std::initializer_list<std::uint64_t> ids) {
    std::uint64_t h = mix64(seed ^ kGamma);
    for (std::uint64_t id : ids) {
      h = mix64(h ^ (id + kGamma + (h << 6) + (h >> 2)));
    }
    Rng r(0);
    r.state_ = h;
    return r;
  }

 private:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ull;
  std::uint64_t state_;
};

// Stream ids for the distinct randomness consumers of a run.
namespace stream {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kShuffle = 2;
inline constexpr std::uint64_t kDropout = 3;
inline constexpr std::uint64_t kSample = 4;
inline constexpr std::uint64_t kAugment = 5;
}  // namespace stream

}  // namespace xvt
