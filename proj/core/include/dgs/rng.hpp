// rng.hpp
#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace dgs {

/**
 * @brief Deterministic random source for optimization and scene synthesis.
 *
 * The mt19937_64 engine is fully specified by the standard; the distributions
 * here are hand-rolled (standard-library distributions are not portable across
 * implementations), so a fixed seed yields identical sequences everywhere.
 */
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t raw() { return engine_(); }

  /// Uniform double in [lo, hi).
  double uniform(double lo = 0.0, double hi = 1.0) {
    const double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    return lo + u * (hi - lo);
  }

  /// Standard normal via Box-Muller.
  double normal() {
    double u1 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * uniform());
  }

  /// Uniform integer in [0, n).
  int uniform_int(int n) { return static_cast<int>(engine_() % static_cast<std::uint64_t>(n)); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace dgs
