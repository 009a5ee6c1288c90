#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace mam4wf {

// Deterministic RNG. std::*_distribution output is implementation-defined,
// so the draws are derived from raw mt19937_64 words by hand: the same seed
// yields the same stream under any standard library.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // lo..hi inclusive, by rejection so the mapping is unbiased.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    const uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    uint64_t x;
    do {
      x = gen_();
    } while (x >= limit);
    return lo + static_cast<int64_t>(x % span);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Box-Muller with a cached spare.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 == 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  // Normal(0, stddev) clipped by rejection to +-2 stddev.
  double truncated_normal(double stddev) {
    double x;
    do {
      x = normal();
    } while (std::fabs(x) > 2.0);
    return x * stddev;
  }

  // Full engine state as text, for resumable checkpoints.
  std::string state_string() const {
    std::ostringstream ss;
    ss << gen_ << " " << (has_spare_ ? 1 : 0) << " ";
    ss.precision(17);
    ss << spare_;
    return ss.str();
  }

  void set_state_string(const std::string& s) {
    std::istringstream ss(s);
    int spare_flag = 0;
    ss >> gen_ >> spare_flag >> spare_;
    if (!ss) throw std::invalid_argument("bad rng state string");
    has_spare_ = spare_flag != 0;
  }

  // Stable per-index sub-seed (splitmix64 finalizer over seed and index),
  // used to generate dataset sequences independently of visit order.
  static uint64_t derive(uint64_t seed, uint64_t index) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace mam4wf
