#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <random>
#include <sstream>
#include <string>

namespace clotseg {

/// Deterministic random source. Wraps mt19937_64 but implements the
/// distributions itself so that streams are bit-reproducible across standard
/// libraries and platforms (std::normal_distribution is not).
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  /// Uniform in [0, 1) with 53 bits of precision.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi] inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    // Rejection sampling to kill modulo bias.
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % span;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return lo + static_cast<std::int64_t>(x % span);
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal via Box-Muller; the cached second value keeps one draw
  /// per call on average.
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(theta);
    has_cached_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double sigma) { return mean + sigma * normal(); }

  /// Independent stream for worker `index`; splitmix64 of (seed ^ index) so
  /// neighbouring indices do not produce correlated engines.
  static Rng stream(std::uint64_t base_seed, std::uint64_t index) {
    std::uint64_t z = base_seed + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    z = z ^ (z >> 31);
    return Rng(z);
  }

  /// Text round-trip of the full engine state (for checkpoints). The cached
  /// normal draw is stored as its bit pattern to survive formatting exactly.
  std::string serialize() const {
    std::uint64_t bits = 0;
    static_assert(sizeof(bits) == sizeof(cached_));
    std::memcpy(&bits, &cached_, sizeof(bits));
    std::ostringstream os;
    os << engine_ << ' ' << (has_cached_ ? 1 : 0) << ' ' << bits;
    return os.str();
  }

  void deserialize(const std::string& state) {
    std::istringstream is(state);
    int flag = 0;
    std::uint64_t bits = 0;
    is >> engine_ >> flag >> bits;
    std::memcpy(&cached_, &bits, sizeof(bits));
    has_cached_ = flag != 0;
  }

 private:
  std::mt19937_64 engine_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace clotseg
