#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace dennlm {

// splitmix64 finalizer.
inline uint64_t mix64(uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Derives an independent stream seed from a base seed and a tag
/// (epoch index, branch index, grid-run index, ...). Pure function.
inline uint64_t derive_seed(uint64_t base, uint64_t tag) {
  return mix64(base ^ mix64(tag ^ 0x632be59bd9b4e019ULL));
}

/// Counter-based generator (splitmix64). Identical seeds produce identical
/// streams on every platform; the whole toolkit draws randomness only
/// through this class so runs are reproducible bit for bit.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : state_(seed) {}

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix64(state_);
  }

  /// Uniform double in [0, 1).
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n). n must be positive.
  uint64_t below(uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
    return static_cast<uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  /// Standard normal via Box-Muller (explicit so streams do not depend on
  /// any library's distribution internals).
  double gaussian() {
    double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
    double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Seeded Fisher-Yates permutation of [0, n).
  std::vector<int64_t> permutation(int64_t n) {
    std::vector<int64_t> idx(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
    for (int64_t i = n - 1; i > 0; --i) {
      int64_t j = static_cast<int64_t>(below(static_cast<uint64_t>(i + 1)));
      std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
    }
    return idx;
  }

  /// k distinct values drawn uniformly from [0, n), in draw order.
  std::vector<int32_t> sample_without_replacement(int32_t k, int32_t n) {
    if (k < 0 || k > n)
      throw std::invalid_argument("sample_without_replacement: need 0 <= k <= n");
    std::vector<int32_t> pool(static_cast<size_t>(n));
    for (int32_t i = 0; i < n; ++i) pool[static_cast<size_t>(i)] = i;
    std::vector<int32_t> out(static_cast<size_t>(k));
    for (int32_t i = 0; i < k; ++i) {
      int32_t j = i + static_cast<int32_t>(below(static_cast<uint64_t>(n - i)));
      std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
      out[static_cast<size_t>(i)] = pool[static_cast<size_t>(i)];
    }
    return out;
  }

 private:
  uint64_t state_;
};

}  // namespace dennlm
