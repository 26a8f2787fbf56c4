#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace cpda {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9E3779B97F4A7C15ull;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace detail

/// Mixes a tuple of integer keys into a single 64-bit stream key.
inline std::uint64_t mix_keys(std::initializer_list<std::uint64_t> keys) {
  std::uint64_t acc = 0x2545F4914F6CDD1Dull;
  for (std::uint64_t k : keys) {
    acc ^= k + 0x9E3779B97F4A7C15ull + (acc << 6) + (acc >> 2);
    detail::splitmix64(acc);
  }
  return acc;
}

/// Small counter-based generator: a splitmix64 stream keyed by caller-chosen
/// integers, with explicit Box-Muller normals. Every random quantity in the
/// library is drawn from a stream keyed by (seed, purpose, cycle, step,
/// member, ...) so results are bitwise reproducible regardless of evaluation
/// order.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key) : state_(key) {}
  CounterRng(std::initializer_list<std::uint64_t> keys) : state_(mix_keys(keys)) {}

  /// Uniform double strictly inside (0, 1).
  double uniform() {
    const std::uint64_t bits = detail::splitmix64(state_);
    return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller; pairs are cached.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  Eigen::VectorXd normal_vector(int n) {
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = normal();
    return v;
  }

  /// Fisher-Yates permutation of {0, ..., n-1}.
  std::vector<int> permutation(int n) {
    std::vector<int> p(n);
    for (int i = 0; i < n; ++i) p[i] = i;
    for (int i = n - 1; i > 0; --i) {
      const int j = static_cast<int>(uniform() * (i + 1));
      std::swap(p[i], p[j > i ? i : j]);
    }
    return p;
  }

 private:
  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace cpda
