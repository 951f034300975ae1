#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace conceptmil {

std::uint64_t fnv1a64(std::string_view text);

// Derive an independent stream seed from a base seed and a tag.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);
std::uint64_t mix_seed(std::uint64_t seed, std::string_view tag);
std::uint64_t mix_seed(std::uint64_t seed, std::string_view tag, std::uint64_t salt);

// Deterministic random stream. Uniform and normal draws are derived from
// mt19937_64 output directly so results do not depend on the standard
// library's distribution internals.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // [0, 1)
  double uniform() {
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n)
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(next() % n); }

  double normal();

  template <typename T>
  void shuffle(std::vector<T>& items) {
    // Fisher-Yates with explicit index draws.
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[index(i)]);
    }
  }

  std::vector<double> normal_vector(std::size_t n, double stddev);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace conceptmil
