#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace agmonlab {

/// mt19937_64 with hand-rolled output maps. The engine's stream is pinned by
/// the standard, and skipping std::*_distribution keeps draws byte-identical
/// across standard libraries (determinism is part of the report contract).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  double uniform() {  // [0, 1)
    return double(eng_() >> 11) * 0x1.0p-53;
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double log_uniform(double lo, double hi) {
    return std::exp(uniform(std::log(lo), std::log(hi)));
  }
  std::int64_t uniform_int(std::int64_t n) {  // [0, n)
    // rejection-free modulo is biased; keep rejection for exactness
    const std::uint64_t un = std::uint64_t(n);
    const std::uint64_t lim = ~std::uint64_t(0) - (~std::uint64_t(0) % un);
    std::uint64_t x;
    do {
      x = eng_();
    } while (x >= lim);
    return std::int64_t(x % un);
  }
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    have_spare_ = true;
    return u * f;
  }
  std::uint64_t raw() { return eng_(); }

 private:
  std::mt19937_64 eng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace agmonlab
