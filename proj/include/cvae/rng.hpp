#pragma once

// Deterministic random source used everywhere in this project.
//
// Generator: xoshiro256** (Blackman & Vigna), state seeded with SplitMix64.
// Substreams are derived by folding (seed, purpose, a, b) through the
// SplitMix64 finalizer, so each consumer of randomness in a run (weight init,
// per-epoch shuffles, per-batch dropout masks and latent noise, evaluation
// noise) owns an independent stream that is fully determined by the run seed.
// All stream derivation is 64-bit integer arithmetic: identical seeds give
// identical bit streams on every platform.
//
// Uniform doubles take the top 53 bits: u = (bits>>11 + 0.5) * 2^-53, always
// in the open interval (0,1). Standard normals use the Box-Muller transform:
// each pair of uniforms (u1,u2) yields r*cos(2*pi*u2) and r*sin(2*pi*u2) with
// r = sqrt(-2 ln u1); the second value of the pair is cached.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace cvae {

namespace detail {

constexpr std::uint64_t kSplitMix64Gamma = 0x9E3779B97F4A7C15ull;

constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

constexpr std::uint64_t splitmix64_next(std::uint64_t& state) {
  state += kSplitMix64Gamma;
  return mix64(state);
}

constexpr std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

constexpr std::uint64_t rotl64(std::uint64_t x, int k) {
  return (x << k) | (x >> (64 - k));
}

}  // namespace detail

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed) { reseed(seed); }

  // Substream constructor: an independent stream identified by
  // (seed, purpose, a, b), e.g. ("batch", epoch, batch_index).
  Rng(std::uint64_t seed, std::string_view purpose, std::uint64_t a = 0,
      std::uint64_t b = 0)
      : seed_(seed) {
    std::uint64_t h = seed;
    h = detail::mix64(h ^ detail::fnv1a64(purpose));
    h = detail::mix64(h ^ a);
    h = detail::mix64(h ^ b);
    reseed(h);
  }

  std::uint64_t seed() const { return seed_; }

  // xoshiro256** next()
  std::uint64_t next_u64() {
    const std::uint64_t result = detail::rotl64(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = detail::rotl64(s_[3], 45);
    return result;
  }

  // Uniform in the open interval (0,1), 53-bit resolution.
  double uniform01() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  double standard_normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = uniform01();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // Unbiased integer in [0, n) by rejection on 2^64 mod n.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below: n must be > 0");
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

 private:
  void reseed(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& s : s_) s = detail::splitmix64_next(sm);
    have_spare_ = false;
    spare_ = 0.0;
  }

  std::uint64_t s_[4] = {};
  std::uint64_t seed_ = 0;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

inline std::vector<double> sample_standard_normal(std::size_t n, Rng& rng) {
  if (n == 0) {
    throw std::invalid_argument("sample_standard_normal: n must be >= 1");
  }
  std::vector<double> out(n);
  for (double& v : out) v = rng.standard_normal();
  return out;
}

}  // namespace cvae
