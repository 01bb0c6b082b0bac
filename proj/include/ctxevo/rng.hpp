#pragma once

#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

#include "ctxevo/hash.hpp"

namespace ctxevo {

// Deterministic splitmix64 stream. Self-contained so that identical seeds
// yield identical draw sequences on every platform and standard library,
// which the run logs depend on.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, bound), unbiased via rejection. bound must be > 0.
  std::uint64_t below(std::uint64_t bound) {
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= threshold) return r % bound;
    }
  }

  // Uniform in [0, 1) with 53 bits of precision.
  double unit_real() {
    return double(next_u64() >> 11) * 0x1.0p-53;
  }

  bool bernoulli(double p) { return unit_real() < p; }

  // k distinct indices drawn uniformly without replacement from [0, n),
  // in draw order (partial Fisher-Yates). Requires k <= n.
  std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k) {
    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = i;
    std::vector<std::size_t> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t j = i + std::size_t(below(n - i));
      std::swap(pool[i], pool[j]);
      out.push_back(pool[i]);
    }
    return out;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[std::size_t(below(i))]);
    }
  }

  // Independent stream addressed by (label, a, b) under one root seed.
  // The engine derives one stream per offspring from (generation, child)
  // so concurrent evaluation cannot perturb the genetic sequence.
  static Rng stream(std::uint64_t root_seed, std::string_view label,
                    std::uint64_t a = 0, std::uint64_t b = 0) {
    std::uint64_t s = scramble(root_seed ^ fnv1a64(label));
    s = scramble(s ^ a);
    s = scramble(s ^ b);
    return Rng(s);
  }

 private:
  static std::uint64_t scramble(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::uint64_t state_;
};

}  // namespace ctxevo
