#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace curvgib {

// splitmix64 finalizer; the building block of every keyed stream below.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t hash_combine(std::uint64_t h, std::uint64_t v) noexcept {
  return mix64(h ^ mix64(v));
}

/// Counter-based random stream. A value depends only on (key, counter), so
/// draws for element k can be produced in any order or in parallel and still
/// be byte-identical.
class KeyedStream {
 public:
  constexpr KeyedStream() = default;
  constexpr explicit KeyedStream(std::uint64_t seed) : key_(mix64(seed)) {}

  // Derive an independent sub-stream, e.g. stream.fork(epoch).fork(step).
  [[nodiscard]] constexpr KeyedStream fork(std::uint64_t tag) const {
    KeyedStream s;
    s.key_ = hash_combine(key_, tag);
    return s;
  }

  [[nodiscard]] constexpr std::uint64_t bits(std::uint64_t counter) const {
    return mix64(hash_combine(key_, counter));
  }

  // Uniform on the open interval (0, 1).
  [[nodiscard]] double uniform_open(std::uint64_t counter) const {
    return (static_cast<double>(bits(counter) >> 11) + 0.5) * 0x1.0p-53;
  }

  // Uniform on [0, 1).
  [[nodiscard]] double uniform(std::uint64_t counter) const {
    return static_cast<double>(bits(counter) >> 11) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller on two derived uniforms.
  [[nodiscard]] double normal(std::uint64_t counter) const {
    const double u1 = uniform_open(2 * counter);
    const double u2 = uniform_open(2 * counter + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  // Uniform integer in [0, n).
  [[nodiscard]] std::uint64_t below(std::uint64_t counter, std::uint64_t n) const {
    return static_cast<std::uint64_t>(uniform(counter) * static_cast<double>(n)) % n;
  }

 private:
  std::uint64_t key_ = 0;
};

/// Sequential generator over a KeyedStream for code that just wants "the next
/// number" (graph generation, splits, shuffles).
class SeqRng {
 public:
  explicit SeqRng(std::uint64_t seed) : stream_(seed) {}
  explicit SeqRng(KeyedStream stream) : stream_(stream) {}

  double uniform() { return stream_.uniform(next_++); }
  double uniform_open() { return stream_.uniform_open(next_++); }
  double normal() { return stream_.normal(next_++); }
  std::uint64_t below(std::uint64_t n) { return stream_.below(next_++, n); }

  template <typename It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      const auto j = below(i);
      std::iter_swap(first + (i - 1), first + j);
    }
  }

 private:
  KeyedStream stream_;
  std::uint64_t next_ = 0;
};

// 64-bit FNV-1a, the content hash used for inputs and checkpoints.
inline std::uint64_t fnv1a64(const void* data, std::size_t size,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace curvgib
