#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <numbers>
#include <vector>

namespace sgad {

// xoshiro256++ with splitmix64 seeding. Hand-rolled so that streams are
// reproducible across standard libraries and serializable bit-for-bit.
class Rng {
 public:
  explicit Rng(uint64_t seed) {
    uint64_t x = seed;
    for (auto& s : state_) s = splitmix64(x);
  }

  // Derive an independent substream from a seed and a tag path, so every
  // consumer (init, per-step noise, per-epoch shuffle) owns its own stream.
  static Rng derive(uint64_t seed, std::initializer_list<uint64_t> tags) {
    uint64_t x = seed;
    for (uint64_t t : tags) {
      x = splitmix64(x) ^ (t * 0x9e3779b97f4a7c15ULL);
    }
    return Rng(x);
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1), 53-bit resolution.
  double next_double() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Integer in [0, n).
  uint64_t next_below(uint64_t n) { return next_u64() % n; }

  // Standard normal via Box-Muller; second value cached.
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1 = 1.0 - next_double();  // (0, 1]
    double u2 = next_double();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * std::numbers::pi * u2;
    cached_ = r * std::sin(theta);
    has_cached_ = true;
    return r * std::cos(theta);
  }

  // State round-trip for checkpointing.
  std::vector<uint64_t> save() const {
    std::vector<uint64_t> s(state_.begin(), state_.end());
    s.push_back(has_cached_ ? 1 : 0);
    uint64_t bits;
    static_assert(sizeof(bits) == sizeof(cached_));
    std::memcpy(&bits, &cached_, sizeof(bits));
    s.push_back(bits);
    return s;
  }

  void restore(const std::vector<uint64_t>& s) {
    for (int i = 0; i < 4; ++i) state_[i] = s[size_t(i)];
    has_cached_ = s[4] != 0;
    std::memcpy(&cached_, &s[5], sizeof(cached_));
  }

 private:
  static uint64_t splitmix64(uint64_t& x) {
    uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  static uint64_t rotl(uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }

  std::array<uint64_t, 4> state_{};
  double cached_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace sgad
