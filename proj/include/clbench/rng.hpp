#pragma once

// Seeded random streams.
//
// Every random decision in the framework draws from a named stream derived
// from (master seed, stream purpose, index). The generator is MT19937-64,
// whose output sequence is fixed by the C++ standard, and all value
// conversions (bounded ints, reals, shuffles) are implemented here rather
// than with std distributions, whose output is implementation-defined.
// Identical seeds therefore produce identical experiments on any platform.

#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace clbench::rng {

// Stream purposes. Each purpose gets an independent substream so that, e.g.,
// changing how often the replay buffer samples does not perturb data
// shuffling under the same master seed.
enum class Stream : std::uint64_t {
  init = 1,         // parameter initialization
  shuffle = 2,      // per-epoch data order
  permutation = 3,  // pixel permutations
  buffer = 4,       // replay-buffer eviction / fill / sampling
  fisher = 5,       // label sampling for importance estimation
  misc = 6,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Substream seed: three rounds of splitmix64 over (master, purpose, index).
inline std::uint64_t derive_seed(std::uint64_t master, Stream purpose, std::uint64_t index = 0) {
  std::uint64_t s = splitmix64(master);
  s = splitmix64(s ^ static_cast<std::uint64_t>(purpose));
  s = splitmix64(s ^ index);
  return s;
}

using Generator = std::mt19937_64;

inline Generator make_stream(std::uint64_t master, Stream purpose, std::uint64_t index = 0) {
  return Generator(derive_seed(master, purpose, index));
}

// Uniform integer in [0, bound) by rejection; bound > 0.
inline std::uint64_t next_below(Generator& g, std::uint64_t bound) {
  if (bound == 0) throw std::invalid_argument("rng::next_below: bound must be positive");
  const std::uint64_t limit = ~0ULL - (~0ULL % bound);
  for (;;) {
    std::uint64_t v = g();
    if (v < limit || limit == 0) return v % bound;
  }
}

// Uniform double in [0, 1) with 53 random bits.
inline double real01(Generator& g) {
  return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

// Uniform float in [lo, hi).
inline float uniform(Generator& g, float lo, float hi) {
  return lo + static_cast<float>(real01(g)) * (hi - lo);
}

// Fisher-Yates, downward, using next_below. Stable across platforms.
template <typename T>
void shuffle(std::vector<T>& v, Generator& g) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(next_below(g, i));
    std::swap(v[i - 1], v[j]);
  }
}

inline std::vector<int> identity_permutation(int n) {
  std::vector<int> p(n);
  for (int i = 0; i < n; ++i) p[i] = i;
  return p;
}

inline std::vector<int> random_permutation(int n, Generator& g) {
  std::vector<int> p = identity_permutation(n);
  shuffle(p, g);
  return p;
}

// k distinct indices drawn from [0, n), in random order.
inline std::vector<int> sample_without_replacement(int n, int k, Generator& g) {
  if (k > n) throw std::invalid_argument("rng::sample_without_replacement: k > n");
  std::vector<int> idx = identity_permutation(n);
  // partial Fisher-Yates: first k entries become the sample
  for (int i = 0; i < k; ++i) {
    int j = i + static_cast<int>(next_below(g, static_cast<std::uint64_t>(n - i)));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  return idx;
}

}  // namespace clbench::rng
