#pragma once

#include <cmath>
#include <cstdint>

#include "ltnode/errors.hpp"

namespace ltnode {

namespace detail {

// splitmix64, used for seeding and stream derivation.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t rotl64(std::uint64_t x, int k) {
  return (x << k) | (x >> (64 - k));
}

}  // namespace detail

// Deterministic generator: xoshiro256** state seeded via splitmix64.
// All stochastic behaviour in the library flows through this type so seeded
// runs are bitwise reproducible across platforms and independent of the
// standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) {
    std::uint64_t sm = seed;
    for (auto& w : s_) w = detail::splitmix64(sm);
    have_spare_ = false;
    spare_ = 0.0;
  }

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

  // Uniform on [0, 1), 53-bit resolution.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double a, double b) {
    if (!(a <= b)) throw contract_error("Rng::uniform: requires a <= b");
    return a + (b - a) * uniform01();
  }

  // Standard normal via the polar (Marsaglia) method; caches the spare draw.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform01() - 1.0;
      v = 2.0 * uniform01() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    have_spare_ = true;
    return u * m;
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Derive an independent stream. Stream ids give distinct, reproducible
  // sub-generators from one root seed (init / sampling / data, per-example
  // streams, ...).
  Rng split(std::uint64_t stream) const {
    std::uint64_t sm = s_[0] ^ detail::rotl64(s_[2], 29) ^ (0x9e3779b97f4a7c15ULL * (stream + 1));
    Rng child(0);
    for (auto& w : child.s_) w = detail::splitmix64(sm);
    child.have_spare_ = false;
    return child;
  }

  // 64-bit digest of the current state, for checkpoint provenance.
  std::uint64_t state_digest() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (auto w : s_) {
      for (int i = 0; i < 8; ++i) {
        h ^= (w >> (8 * i)) & 0xff;
        h *= 0x100000001b3ULL;
      }
    }
    return h;
  }

 private:
  std::uint64_t s_[4];
  bool have_spare_;
  double spare_;
};

}  // namespace ltnode
