#pragma once

#include <cstdint>
#include <numeric>
#include <vector>

namespace kiprompt {

/// SplitMix64: tiny generator with a portable, fixed output sequence for a
/// given seed. std::uniform_* distributions are implementation-defined, so
/// everything seeded in this library draws through this class instead; the
/// draw order of each consumer is documented and is part of its contract.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1): the top 53 bits of next() scaled by 2^-53.
  double next_double() {
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
  }

  /// Uniform integer in [0, n) via rejection sampling (no modulo bias).
  /// Consumes one next() per accepted draw plus one per rejection.
  std::uint64_t next_below(std::uint64_t n) {
    const std::uint64_t rem = (UINT64_MAX % n + 1) % n;  // 2^64 mod n
    const std::uint64_t limit = UINT64_MAX - rem;
    std::uint64_t x;
    do {
      x = next();
    } while (x > limit);
    return x % n;
  }

 private:
  std::uint64_t state_;
};

/// Draw k distinct indices from [0, n) by partial Fisher-Yates. The result
/// preserves draw order: element i is the i-th index drawn. One next_below
/// call per draw, i in 0..k-1, bound n-i.
inline std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k,
                                               SplitMix64& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < k; ++i) {
    std::size_t j = i + static_cast<std::size_t>(rng.next_below(n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  return idx;
}

/// Full Fisher-Yates shuffle; one next_below per position from the back.
template <typename T>
void shuffle(std::vector<T>& items, SplitMix64& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng.next_below(i));
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace kiprompt
