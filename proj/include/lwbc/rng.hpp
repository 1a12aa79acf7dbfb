#pragma once

#include <cstdint>
#include <utility>

namespace lwbc {

/// Counter-based random stream.
///
/// Draw i of stream (seed, stream_id) is `mix64(key + (i + 1) * kGamma)` where
/// `key = mix64(seed ^ mix64(stream_id + kGamma))` and `mix64` is the SplitMix64
/// finalizer. Only integer arithmetic is involved, so a given
/// (seed, stream_id, draw index) yields the same 64 bits on every platform.
///
/// Gaussians use the Box-Muller transform on two consecutive uniform draws and
/// return both variates in turn.
class RngStream {
 public:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

  RngStream() : RngStream(0, 0) {}
  RngStream(std::uint64_t seed, std::uint64_t stream_id);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform();
  /// Uniform on [lo, hi).
  double uniform(double lo, double hi);
  /// Unbiased integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Independent child stream; does not advance this stream.
  RngStream child(std::uint64_t sub_id) const;

  /// Fisher-Yates shuffle driven by this stream.
  template <typename It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      const std::uint64_t j = below(i);
      using std::swap;
      swap(first[i - 1], first[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t mix64(std::uint64_t z);

/// Seed for repetition `index` derived from `base`; index 0 returns `base`.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

}  // namespace lwbc
