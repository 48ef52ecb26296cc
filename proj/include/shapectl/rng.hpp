#pragma once

// Deterministic RNG streams. std::mt19937_64 is seeded through splitmix64 so
// streams can be derived hierarchically from (seed, key...) tuples, e.g. one
// stream per (dataset seed, sample index) or per (sampler seed, batch index).
// Distribution math is hand-rolled (std::*_distribution is not
// cross-implementation stable).

#include <cmath>
#include <cstdint>
#include <random>

namespace shapectl {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

class RngStream {
 public:
  explicit RngStream(std::uint64_t seed)
      : state_(splitmix64(seed)), engine_(splitmix64(seed)) {}

  // Independent child stream; derive(a).derive(b) != derive(b).derive(a).
  RngStream derive(std::uint64_t key) const {
    return RngStream(state_ ^ splitmix64(key ^ 0x51f9c2e7a3d48b15ull));
  }

  std::uint64_t next_u64() { return engine_(); }

  // uniform in [0,1)
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // inclusive integer range
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(next_u64() % span);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Box-Muller; caches the second variate
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 1e-300);
    double u2 = uniform();
    double mag = std::sqrt(-2.0 * std::log(u1));
    spare_ = mag * std::sin(2.0 * M_PI * u2);
    have_spare_ = true;
    return mag * std::cos(2.0 * M_PI * u2);
  }

 private:
  std::uint64_t state_;
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace shapectl
