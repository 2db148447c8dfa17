#pragma once

#include "fmu/core.hpp"

#include <cmath>
#include <cstdint>
#include <string_view>

namespace fmu {

inline constexpr uint64_t kFnvOffset = 14695981039346656037ull;
inline constexpr uint64_t kFnvPrime = 1099511628211ull;

inline uint64_t fnv1a64(std::string_view s) {
  uint64_t h = kFnvOffset;
  for (unsigned char c : s) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

inline uint64_t splitmix64(uint64_t& state) {
  state += 0x9E3779B97F4A7C15ull;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Stable sub-stream derivation: the label picks the stream, the seed picks
// the run. Every random decision in the codebase flows through one of these.
inline uint64_t derive_seed(uint64_t seed, std::string_view label) {
  uint64_t s = fnv1a64(label) ^ seed;
  return splitmix64(s);
}

class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() { return splitmix64(state_); }

  // [0, 1)
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Box-Muller with spare caching; draw order is part of the determinism
  // contract, so consumers must not interleave streams.
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    constexpr double two_pi = 6.283185307179586476925286766559;
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = two_pi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // [lo, hi)
  int64_t uniform_int(int64_t lo, int64_t hi) {
    return lo + static_cast<int64_t>(uniform() * static_cast<double>(hi - lo));
  }

 private:
  uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

template <typename S>
Mat<S> gaussian_matrix(Index rows, Index cols, Rng& rng, double scale = 1.0) {
  Mat<S> m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j)
      m(i, j) = static_cast<S>(rng.gaussian() * scale);
  return m;
}

template <typename S>
Vec<S> gaussian_vector(Index n, Rng& rng, double scale = 1.0) {
  Vec<S> v(n);
  for (Index i = 0; i < n; ++i) v(i) = static_cast<S>(rng.gaussian() * scale);
  return v;
}

}  // namespace fmu
