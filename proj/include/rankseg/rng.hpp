#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace rankseg {

// Deterministic generator with portable output. Standard-library
// distributions are implementation-defined, so every draw here is spelled
// out explicitly; identical seeds give identical streams on any platform.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {
    // decorrelate trivially related seeds (0, 1, 2, ...)
    next_u64();
    next_u64();
  }

  uint64_t next_u64() {
    // splitmix64
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1) with 53 bits of precision
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // uniform integer in [0, n)
  uint64_t next_below(uint64_t n) {
    // multiply-shift; bias is negligible for the small n used here
    return static_cast<uint64_t>(next_double() * static_cast<double>(n));
  }

  // uniform integer in [lo, hi] inclusive
  int64_t next_range(int64_t lo, int64_t hi) {
    return lo + static_cast<int64_t>(next_below(static_cast<uint64_t>(hi - lo + 1)));
  }

  // standard normal via Box-Muller (both values used, in order)
  double next_normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = next_double();
    double u2 = next_double();
    while (u1 <= 1e-300) u1 = next_double();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  std::vector<double> normal_vector(size_t n, double stddev = 1.0) {
    std::vector<double> out(n);
    for (auto& v : out) v = stddev * next_normal();
    return out;
  }

  // Fisher-Yates shuffle of 0..n-1
  std::vector<int64_t> permutation(int64_t n) {
    std::vector<int64_t> p(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) p[static_cast<size_t>(i)] = i;
    for (int64_t i = n - 1; i > 0; --i) {
      int64_t j = static_cast<int64_t>(next_below(static_cast<uint64_t>(i + 1)));
      std::swap(p[static_cast<size_t>(i)], p[static_cast<size_t>(j)]);
    }
    return p;
  }

  // derive an independent stream, e.g. one per sample or per trial
  static uint64_t derive(uint64_t seed, uint64_t stream) {
    uint64_t z = seed ^ (0x9e3779b97f4a7c15ull * (stream + 0x632be59bd9b4e019ull));
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

 private:
  uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace rankseg
