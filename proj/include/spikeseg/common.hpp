#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace spikeseg {

// Error taxonomy. Callers (and tests) dispatch on these categories:
//   dimension_error  - tensor/shape mismatches, names the offending axis
//   config_error     - invalid architecture or run configuration
//   validation_error - out-of-range values in otherwise well-shaped data
//   state_error      - API called before its prerequisite (e.g. backward
//                      without a cached forward)
//   mode_error       - model mode does not match the requested execution path
//   io_error         - file system / serialization failures
struct dimension_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct validation_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct state_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct mode_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// splitmix64 step; used to derive independent stream seeds from
// (run seed, epoch, item, ...) tuples deterministically.
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline uint64_t mix_seed(uint64_t a, uint64_t b) { return mix64(a ^ mix64(b)); }
inline uint64_t mix_seed(uint64_t a, uint64_t b, uint64_t c) {
  return mix64(mix_seed(a, b) ^ mix64(c));
}

// Deterministic RNG. Draws are hand-rolled on top of mt19937 so streams are
// bit-identical across standard library implementations (std distributions
// give no such guarantee).
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(static_cast<uint32_t>(mix64(seed))) {}

  uint32_t next_u32() { return gen_(); }

  // uniform in [0,1) with 24-bit resolution
  float uniform() { return static_cast<float>(gen_() >> 8) * (1.0f / 16777216.0f); }

  float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }

  int uniform_int(int lo, int hi) {  // inclusive bounds
    return lo + static_cast<int>(gen_() % static_cast<uint32_t>(hi - lo + 1));
  }

  // standard normal via Box-Muller (cached pair)
  float normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    float u1 = 0.0f, u2 = 0.0f;
    do {
      u1 = uniform();
    } while (u1 <= 1e-12f);
    u2 = uniform();
    const float r = std::sqrt(-2.0f * std::log(u1));
    const float a = 6.28318530717958647692f * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

 private:
  std::mt19937 gen_;
  bool have_spare_ = false;
  float spare_ = 0.0f;
};

}  // namespace spikeseg
