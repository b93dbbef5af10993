#pragma once
/*
 * Deterministic seedable random stream.
 *
 * splitmix64 core with hand-rolled distributions so that a given seed yields
 * the identical sequence on every platform (std:: distributions are
 * implementation-defined). Streams are single-owner; derive substreams with
 * RngStream::derived instead of sharing one.
 */

#include <cstdint>
#include <cmath>
#include <numbers>
#include <utility>
#include <vector>

namespace tta {

class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; the second variate is cached, so draws come in deterministic
  // pairs per stream.
  double gaussian() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1], keeps the log finite
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    cached_ = r * std::sin(a);
    has_cached_ = true;
    return r * std::cos(a);
  }

  // Draw in [0, n) via 128-bit multiply-shift.
  std::uint64_t bounded(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[bounded(i)]);
    }
  }

  // Statistically independent substream for (seed, tag). Used to decorrelate
  // components (dataset, stream order, augmentation, ...) that share one
  // user-facing seed.
  static RngStream derived(std::uint64_t seed, std::uint64_t tag) {
    RngStream mixer(seed ^ (0xD1B54A32D192ED03ULL * (tag + 1)));
    mixer.next_u64();
    return RngStream(mixer.next_u64());
  }

  // Scalar form of `derived` for composing sub-seeds.
  static std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
    RngStream s = derived(seed, tag);
    return s.next_u64();
  }

 private:
  std::uint64_t state_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace tta
