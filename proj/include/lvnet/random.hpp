#pragma once

#include <cmath>
#include <cstdint>

namespace lvnet {

// Deterministic, serializable RNG used for every stochastic choice in the
// project (init, synthesis, shuffling). A single u64 of state keeps
// checkpointing trivial and results identical across standard libraries,
// which std::normal_distribution would not guarantee.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : state_(seed) {}

  uint64_t next_u64() {
    // splitmix64
    state_ += 0x9e3779b97f4a7c15ULL;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // i in [0, n)
  uint64_t next_below(uint64_t n) { return next_u64() % n; }

  int uniform_int(int lo, int hi) {  // inclusive bounds
    return lo + static_cast<int>(next_below(static_cast<uint64_t>(hi - lo + 1)));
  }

  // Box-Muller, one value per call so the state stays a pure function of
  // the call count.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Normal resampled until within ±2 stddev.
  double trunc_normal(double mean, double stddev) {
    double v = normal();
    while (v < -2.0 || v > 2.0) v = normal();
    return mean + stddev * v;
  }

  uint64_t state() const { return state_; }
  void set_state(uint64_t s) { state_ = s; }

  // Independent stream for (seed, index) pairs, e.g. per-epoch shuffles.
  static Rng fork(uint64_t seed, uint64_t index) {
    Rng r(seed);
    uint64_t a = r.next_u64();
    return Rng(a ^ (index * 0xd1342543de82ef95ULL + 0x2545f4914f6cdd1dULL));
  }

 private:
  uint64_t state_;
};

template <typename It>
void shuffle(It first, It last, Rng& rng) {
  auto n = last - first;
  for (decltype(n) i = n - 1; i > 0; --i) {
    auto j = static_cast<decltype(n)>(rng.next_below(static_cast<uint64_t>(i + 1)));
    std::swap(first[i], first[j]);
  }
}

}  // namespace lvnet
