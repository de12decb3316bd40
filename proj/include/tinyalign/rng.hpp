#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

namespace tinyalign {

// Deterministic RNG. mt19937_64 is fully specified by the standard; the
// distributions here are hand-rolled because the std:: ones are
// implementation-defined and would break cross-toolchain reproducibility.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Unbiased integer in [0, n). Lemire's multiply-reject method.
  std::uint64_t below(std::uint64_t n) {
    auto wide = static_cast<unsigned __int128>(next_u64()) * n;
    auto low = static_cast<std::uint64_t>(wide);
    if (low < n) {
      const std::uint64_t threshold = -n % n;
      while (low < threshold) {
        wide = static_cast<unsigned __int128>(next_u64()) * n;
        low = static_cast<std::uint64_t>(wide);
      }
    }
    return static_cast<std::uint64_t>(wide >> 64);
  }

  // Inclusive range.
  long uniform_int(long lo, long hi) {
    return lo + static_cast<long>(below(static_cast<std::uint64_t>(hi - lo + 1)));
  }

  // Standard normal via Box-Muller with a cached spare.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace tinyalign
