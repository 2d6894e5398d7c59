#pragma once

// Seeded randomness. The engine is std::mt19937_64, whose output sequence is
// fixed by the standard; the distributions below are written out because the
// standard library's distributions are implementation-defined.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <random>
#include <sstream>
#include <string>
#include <string_view>

#include "unisync/error.hpp"

namespace unisync {

/// SplitMix64 finalizer; used to derive independent stream seeds.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t root, std::string_view stream) {
  std::uint64_t h = mix_seed(root);
  for (char c : stream) h = mix_seed(h ^ static_cast<unsigned char>(c));
  return h;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n), unbiased.
  std::uint64_t uniform_index(std::uint64_t n) {
    UNISYNC_CHECK(n > 0, ErrorKind::range, "uniform_index over empty range");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  /// Uniform integer in [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    UNISYNC_CHECK(lo <= hi, ErrorKind::range, "uniform_int with lo > hi");
    return lo + static_cast<std::int64_t>(uniform_index(static_cast<std::uint64_t>(hi - lo) + 1));
  }

  bool bernoulli(double p) { return uniform01() < p; }

  /// Standard normal via Box-Muller (no cached second value, so the stream
  /// position depends only on the number of calls).
  double normal() {
    double u1;
    do {
      u1 = uniform01();
    } while (u1 <= 0.0);
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Fills `out` with scale * N(0,1), using both Box-Muller outputs.
  void fill_normal(std::span<float> out, double scale) {
    std::size_t i = 0;
    while (i < out.size()) {
      double u1;
      do {
        u1 = uniform01();
      } while (u1 <= 0.0);
      const double u2 = uniform01();
      const double r = std::sqrt(-2.0 * std::log(u1));
      out[i++] = static_cast<float>(scale * r * std::cos(2.0 * std::numbers::pi * u2));
      if (i < out.size()) out[i++] = static_cast<float>(scale * r * std::sin(2.0 * std::numbers::pi * u2));
    }
  }

  std::string state() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
  }

  void set_state(const std::string& s) {
    std::istringstream is(s);
    is >> engine_;
    UNISYNC_CHECK(!is.fail(), ErrorKind::truncated, "malformed rng state");
  }

  friend bool operator==(const Rng& a, const Rng& b) { return a.engine_ == b.engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace unisync
