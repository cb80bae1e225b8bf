#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "foogd/tensor.hpp"

namespace foogd {

/// Counter-based deterministic random stream. Two streams constructed with
/// the same (seed, label) produce identical sequences; distinct labels give
/// independent sequences. The state is (base, counter) so streams can be
/// copied and replayed.
class RngStream {
 public:
  RngStream(std::uint64_t seed, const std::string& label)
      : base_(mix(seed ^ fnv1a(label))), counter_(0) {}

  /// Stream for a sub-purpose, e.g. per (client, round, "langevin").
  RngStream child(const std::string& tag) const {
    return RngStream(base_, tag);
  }

  std::uint64_t next_u64() { return mix(base_ + 0x9e3779b97f4a7c15ULL * ++counter_); }

  /// Uniform in (0, 1): never exactly 0 so log() is safe.
  double next_uniform() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller; draws in pairs, caches the spare.
  double next_gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = next_uniform();
    double u2 = next_uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  /// i.i.d. N(0,1) entries.
  Tensor gaussian(std::vector<std::size_t> shape) {
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = next_gaussian();
    return t;
  }

  /// Integer in [0, n).
  std::uint64_t next_below(std::uint64_t n) {
    return n == 0 ? 0 : next_u64() % n;
  }

  static std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    return h;
  }

 private:
  // splitmix64 finalizer
  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t base_;
  std::uint64_t counter_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace foogd
