#pragma once

#include <cmath>
#include <cstdint>

namespace mvdd {

// Deterministic splittable generator built on splitmix64. Substreams obtained
// via fork() depend only on the construction seed and the fork key, never on
// how many values the parent has produced, so adding views or steps to a run
// does not perturb the draws of unrelated substreams.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), state_(seed) {}

  Rng fork(uint64_t key) const { return Rng(mix(seed_, key)); }

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // uniform in (0, 1]
  double uniform() { return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53; }

  // uniform integer in [lo, hi]
  int uniform_int(int lo, int hi) {
    const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(next_u64() % span);
  }

  // standard normal via Box-Muller; the spare value is cached per instance
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

 private:
  static uint64_t mix(uint64_t a, uint64_t b) {
    uint64_t z = a ^ (b + 0x9e3779b97f4a7c15ull + (a << 6) + (a >> 2));
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  uint64_t seed_;
  uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Substream tags used by samplers and training so runs stay reproducible when
// components are added or reordered.
namespace rng_stream {
inline constexpr uint64_t kInit = 1;
inline constexpr uint64_t kStep = 2;
inline constexpr uint64_t kInputChain = 3;
inline constexpr uint64_t kPassOne = 4;
inline constexpr uint64_t kPassTwo = 5;
inline constexpr uint64_t kTrainStep = 6;
inline constexpr uint64_t kTrainShuffle = 7;
inline constexpr uint64_t kParamInit = 8;
}  // namespace rng_stream

}  // namespace mvdd
