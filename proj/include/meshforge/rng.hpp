#pragma once

#include <cmath>
#include <cstdint>

#include "meshforge/types.hpp"

namespace meshforge {

// splitmix64 generator. Used for every seeded draw in the project so that
// outputs are byte-identical across platforms and standard-library versions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  Scalar uniform() { return static_cast<Scalar>(next_u64() >> 11) * 0x1.0p-53; }

  Scalar uniform(Scalar lo, Scalar hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  int uniform_int(int n) { return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n)); }

  // Standard normal via Box-Muller.
  Scalar normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    Scalar u1 = 1.0 - uniform();  // (0, 1]
    Scalar u2 = uniform();
    Scalar r = std::sqrt(-2.0 * std::log(u1));
    Scalar a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  Vec3 unit_vector() {
    while (true) {
      Vec3 v(uniform(-1, 1), uniform(-1, 1), uniform(-1, 1));
      Scalar n = v.norm();
      if (n > 1e-6 && n <= 1.0) return v / n;
    }
  }

  // Uniform random rotation from a random unit quaternion.
  Mat3 rotation() {
    Scalar u1 = uniform(), u2 = uniform(), u3 = uniform();
    Scalar a = std::sqrt(1.0 - u1), b = std::sqrt(u1);
    Eigen::Quaternion<Scalar> q(a * std::sin(2 * M_PI * u2), a * std::cos(2 * M_PI * u2),
                                b * std::sin(2 * M_PI * u3), b * std::cos(2 * M_PI * u3));
    return q.toRotationMatrix();
  }

 private:
  std::uint64_t state_;
  bool have_spare_ = false;
  Scalar spare_ = 0;
};

}  // namespace meshforge
