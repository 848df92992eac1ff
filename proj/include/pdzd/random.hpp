#pragma once

#include <cmath>
#include <cstdint>

namespace pdzd {

/// Counter-based pseudo-random stream (splitmix64 mixing + Box-Muller).
/// Draw k of stream `seed` depends only on (seed, k), so replays are
/// bit-identical across platforms; std::normal_distribution is not.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed = 0) : seed_(seed) {}

  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  /// Derives an independent stream seed, used for sweep points.
  static std::uint64_t derive(std::uint64_t base, std::uint64_t index) {
    return mix(base ^ mix(index + 1));
  }

  /// Uniform in (0, 1].
  double next_uniform() {
    const std::uint64_t bits = mix(seed_ ^ mix(counter_++));
    return (static_cast<double>(bits >> 11) + 1.0) * 0x1.0p-53;
  }

  double next_normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = next_uniform();
    const double u2 = next_uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  /// Normal clipped to [-bound, bound].
  double next_clipped_normal(double sigma, double bound) {
    double v = sigma * next_normal();
    if (v > bound) v = bound;
    if (v < -bound) v = -bound;
    return v;
  }

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace pdzd
