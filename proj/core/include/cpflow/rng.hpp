#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace cpflow {

// splitmix64 (Steele, Lea, Flood 2014). Counter-based: the whole stream state
// is one 64-bit word, which makes checkpointing and per-(step, sample) seed
// derivation trivial, and draws are bit-identical across platforms. All
// randomness in the library flows through this generator; std:: distributions
// are implementation-defined and are not used.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform on [0, 1), 53-bit mantissa.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform on (0, 1]; safe under log().
  double uniform_pos() {
    return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  }

  // Box-Muller, cosine branch only. Two draws per normal keeps the generator
  // stateless between calls (no cached second value to serialize).
  double normal() {
    double u1 = uniform_pos();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  double rademacher() { return (next_u64() >> 63) ? 1.0 : -1.0; }

  // Fisher-Yates permutation of {0, ..., n-1}. Index selection uses rejection
  // sampling on the top bits so the result is unbiased and reproducible.
  std::vector<long> permutation(long n) {
    std::vector<long> p(static_cast<size_t>(n));
    for (long i = 0; i < n; ++i) p[static_cast<size_t>(i)] = i;
    for (long i = n - 1; i > 0; --i) {
      uint64_t bound = static_cast<uint64_t>(i) + 1;
      uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
      uint64_t r;
      do {
        r = next_u64();
      } while (r >= limit);
      long j = static_cast<long>(r % bound);
      std::swap(p[static_cast<size_t>(i)], p[static_cast<size_t>(j)]);
    }
    return p;
  }

  uint64_t state() const { return state_; }
  void set_state(uint64_t s) { state_ = s; }

 private:
  uint64_t state_;
};

// Derives an independent stream seed from structural indices (global seed,
// step, sample index, ...). One splitmix64 scramble per component.
inline uint64_t mix_seed(uint64_t a, uint64_t b) {
  uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline uint64_t mix_seed(uint64_t a, uint64_t b, uint64_t c) {
  return mix_seed(mix_seed(a, b), c);
}

}  // namespace cpflow
