#ifndef PNR_RNG_HPP
#define PNR_RNG_HPP

#include <cmath>
#include <cstdint>
#include <limits>

// Self-contained RNG so that sampled data is bit-identical across platforms
// and standard-library versions (std::normal_distribution et al. are
// implementation-defined).

namespace pnr {

class SplitMix64 {
 public:
  explicit SplitMix64(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1), 53-bit resolution.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Standard normal via Box-Muller; the second variate of each pair is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 1.0 - uniform01();  // (0, 1], keeps log finite
    double u2 = uniform01();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  /// Poisson by Knuth's product-of-uniforms, chunked so large means do not
  /// underflow exp(-mu).
  int64_t poisson(double mu) {
    int64_t total = 0;
    while (mu > 500.0) {
      total += poisson_knuth(500.0);
      mu -= 500.0;
    }
    return total + poisson_knuth(mu);
  }

  int64_t binomial(int64_t n, double p) {
    int64_t hits = 0;
    for (int64_t i = 0; i < n; ++i)
      if (uniform01() < p) ++hits;
    return hits;
  }

  /// Geometric photon-pair number with P(n) = (1 - r) r^n, r in [0, 1).
  int64_t geometric(double r) {
    if (r <= 0.0) return 0;
    double u = 1.0 - uniform01();  // (0, 1]
    return static_cast<int64_t>(std::floor(std::log(u) / std::log(r)));
  }

 private:
  int64_t poisson_knuth(double mu) {
    if (mu <= 0.0) return 0;
    const double limit = std::exp(-mu);
    double prod = uniform01();
    int64_t n = 0;
    while (prod > limit) {
      prod *= uniform01();
      ++n;
    }
    return n;
  }

  uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Splitting rule for parallel generation: sub-seed for a disjoint range (or
/// any independent stream) is derived as hash(seed, stream_id). Documented so
/// that every consumer derives the same streams.
inline uint64_t derive_stream(uint64_t seed, uint64_t stream_id) {
  SplitMix64 mix(seed ^ (0xA0761D6478BD642Full * (stream_id + 1)));
  mix.next_u64();
  return mix.next_u64();
}

}  // namespace pnr

#endif
