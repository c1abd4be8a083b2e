#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>

namespace cost {

/// splitmix64 step; used to mix seeds so derived streams are decorrelated.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) { return mix64(a ^ mix64(b)); }
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return mix_seed(mix_seed(a, b), c);
}

/// Deterministic RNG with hand-rolled distributions. std:: distributions are
/// implementation-defined, so golden files and checkpoints pin these instead.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t bits() { return eng_(); }

  /// uniform in [0,1)
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// integer in [0, n)
  std::int64_t index(std::int64_t n) {
    return static_cast<std::int64_t>(eng_() % static_cast<std::uint64_t>(n));
  }

  /// standard normal via Box-Muller (no cached spare, two draws per call)
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  void fill_normal(std::span<double> out, double stddev) {
    for (double& v : out) v = normal(0.0, stddev);
  }

  void fill_uniform(std::span<double> out, double lo, double hi) {
    for (double& v : out) v = uniform(lo, hi);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::int64_t i = static_cast<std::int64_t>(v.size()) - 1; i > 0; --i) {
      std::int64_t j = index(i + 1);
      std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
    }
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace cost
