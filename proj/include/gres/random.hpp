#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

namespace gres {

// mt19937_64 plus distribution code of our own: the standard engines are
// specified bit for bit, the standard distributions are not.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}
  // Independent stream for (seed, a, b) via splitmix64 mixing.
  static Rng derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

  std::uint64_t next() { return engine_(); }
  // [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Unbiased integer in [0, n).
  std::uint64_t index(std::uint64_t n);
  // Integer in [lo, hi].
  long range(long lo, long hi) { return lo + static_cast<long>(index(static_cast<std::uint64_t>(hi - lo + 1))); }
  // Standard normal via Box-Muller (one draw per call, the pair mate is dropped).
  double normal();

  std::string state() const;
  void set_state(const std::string& s);

  friend bool operator==(const Rng& a, const Rng& b) { return a.engine_ == b.engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace gres
