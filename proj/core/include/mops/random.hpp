#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace mops {

// Seedable random stream with hand-rolled distributions so that sampled
// sequences are identical across standard library implementations.
class RandomStream {
 public:
  explicit RandomStream(uint64_t seed = 0) : gen_(seed) {}

  // Uniform in [0, 1).
  double uniform() { return (gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  uint64_t uniform_int(uint64_t n) {
    // Rejection sampling to avoid modulo bias.
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t v = gen_();
    while (v >= limit) v = gen_();
    return v % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Standard normal via Box-Muller (no cached spare, one fresh pair per call
  // would waste a draw; we keep the spare for speed but it stays inside the
  // stream state, so determinism is unaffected).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Derives an independent stream; used to hand child components their own
  // reproducible sequences.
  RandomStream spawn() {
    const uint64_t a = gen_();
    const uint64_t b = gen_();
    return RandomStream(a ^ (b * 0x9e3779b97f4a7c15ull));
  }

  uint64_t raw() { return gen_(); }

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace mops
