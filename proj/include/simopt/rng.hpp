#pragma once

#include <cstdint>
#include <limits>
#include <random>
#include <string_view>

namespace simopt {

/// Counter-based, splittable random stream.
///
/// Every draw is a pure function of (key, counter), so a stream can be
/// re-derived anywhere from the run seed and a chain of labels. Streams
/// handed to different components never share state, which keeps results
/// independent of execution order.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed = 0) : key_(mix(seed ^ 0x6a09e667f3bcc909ULL)) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() { return mix(key_ + kGamma * ++counter_); }

  /// Child stream identified by a label.
  [[nodiscard]] Rng split(std::string_view label) const {
    return from_key(mix(key_ ^ fnv1a(label)));
  }
  /// Child stream identified by an index.
  [[nodiscard]] Rng split(std::uint64_t index) const {
    return from_key(mix(key_ + mix(index ^ 0xbb67ae8584caa73bULL)));
  }

  [[nodiscard]] std::uint64_t key() const { return key_; }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal(double mean = 0.0, double stddev = 1.0) {
    std::normal_distribution<double> d(mean, stddev);
    return d(*this);
  }
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    std::uniform_int_distribution<std::size_t> d(0, n - 1);
    return d(*this);
  }
  bool bernoulli(double p) { return uniform() < p; }

 private:
  static constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;

  static Rng from_key(std::uint64_t key) {
    Rng r;
    r.key_ = key;
    return r;
  }

  static constexpr std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  static constexpr std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    return h;
  }

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace simopt
