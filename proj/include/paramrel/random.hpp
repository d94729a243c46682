#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace paramrel {

// Seeded random stream. All stochastic operations take one explicitly.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed), seed_(seed) {}

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }

  // Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }

  // Uniform integer in [lo, hi].
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }

  // Independent child stream derived from the seed this stream was built with.
  Rng split(std::uint64_t stream) const {
    std::seed_seq seq{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                      0x9e3779b9u};
    std::uint32_t words[2];
    seq.generate(words, words + 2);
    return Rng((static_cast<std::uint64_t>(words[0]) << 32) | words[1]);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    // Fisher-Yates with our own index draws so the order does not depend on
    // the standard library's shuffle implementation.
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index(i)]);
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::uint64_t seed_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace paramrel
