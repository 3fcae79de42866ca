#pragma once

#include <cmath>
#include <cstdint>

#include "lwm/tensor.hpp"

namespace lwm {

/// Counter-based deterministic RNG. A stream is fully identified by
/// (seed, stream_id); identical identifiers yield bit-identical sequences
/// regardless of platform. split() derives statistically independent child
/// streams, so parallel work never shares a sequence.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed, std::uint64_t stream_id = 0)
      : seed_(seed), stream_(stream_id) {
    state_ = mix(mix(seed ^ 0x9e3779b97f4a7c15ull) + stream_id);
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_; }

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    return mix(state_);
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::uint64_t uniform_index(std::uint64_t n) { return next_u64() % n; }

  /// Standard normal via Box-Muller (pairs cached for determinism).
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double std) { return mean + std * normal(); }

  RngStream split(std::uint64_t child) const {
    return RngStream(mix(state_ ^ mix(child + 0x632be59bd9b4e019ull)), child);
  }

  template <typename S>
  void fill_normal(Tensor<S>& t, double mean = 0.0, double std = 1.0) {
    for (Index i = 0; i < t.numel(); ++i)
      t[i] = static_cast<S>(normal(mean, std));
  }

  template <typename S>
  void fill_uniform(Tensor<S>& t, double lo, double hi) {
    for (Index i = 0; i < t.numel(); ++i) t[i] = static_cast<S>(uniform(lo, hi));
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ull;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebull;
    z ^= z >> 31;
    return z;
  }

  std::uint64_t seed_ = 0;
  std::uint64_t stream_ = 0;
  std::uint64_t state_ = 0;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace lwm
