#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

namespace headliner {

// splitmix64, used to derive independent stream seeds from a master seed.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  return mix_seed(master ^ mix_seed(stream + 0x51aa1205bf25b13fULL));
}

// Deterministic RNG. All distributions are hand-rolled on top of mt19937_64
// so that sequences are identical across platforms and standard libraries.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t raw() { return engine_(); }

  // uniform in [0, 1), 53-bit resolution
  double unit() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * unit(); }

  // uniform integer in [0, n)
  std::uint64_t integer(std::uint64_t n) {
    // rejection sampling to avoid modulo bias
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return x % n;
  }

  bool bernoulli(double p) { return unit() < p; }

  // Box-Muller; consumes two uniforms per call
  double normal() {
    double u1 = unit();
    while (u1 <= 0.0) u1 = unit();
    const double u2 = unit();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double lognormal(double median, double sigma) {
    return median * std::exp(sigma * normal());
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[integer(i)]);
    }
  }

  // k distinct indices from [0, n)
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k) {
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    shuffle(all);
    all.resize(k);
    return all;
  }

private:
  std::mt19937_64 engine_;
};

}  // namespace headliner
