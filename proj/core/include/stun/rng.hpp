#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace stun {

// Deterministic random source. The integer stream is std::mt19937_64, whose
// output sequence is fixed by the C++ standard; floating-point draws are
// derived from it here (not via <random> distributions, which are
// implementation-defined) so samples agree across standard libraries.
class SeededRng {
 public:
  static constexpr std::string_view kAlgorithm = "mt19937_64";

  explicit SeededRng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller; the second variate is cached.
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Uniform integer in [0, n) by rejection, n > 0.
  std::size_t index(std::size_t n);

  // Fisher-Yates using index().
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[index(i)]);
    }
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace stun
