#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace poseflow {

/// Counter-based deterministic RNG. Each (seed, stream) pair yields an
/// independent sequence; draws depend only on (seed, stream, counter), so
/// results are reproducible across platforms and thread schedules. Streams
/// are named per purpose ("scene", "perturb", "ransac", ...).
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed, std::string_view stream = "") {
    key_ = mix(seed ^ 0x9e3779b97f4a7c15ull);
    for (char c : stream) key_ = mix(key_ ^ static_cast<std::uint64_t>(static_cast<unsigned char>(c)));
  }

  std::uint64_t next_u64() { return mix(key_ + 0x9e3779b97f4a7c15ull * ++counter_); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::uint32_t uniform_index(std::uint32_t n) {
    return static_cast<std::uint32_t>(next_u64() % n);
  }

  /// Standard normal via Box-Muller; consumes two draws per call.
  double gaussian() {
    double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  Eigen::Vector3d gaussian3() { return {gaussian(), gaussian(), gaussian()}; }

  /// Uniform direction on the unit sphere.
  Eigen::Vector3d unit_vector() {
    for (;;) {
      Eigen::Vector3d v = gaussian3();
      double n = v.norm();
      if (n > 1e-12) return v / n;
    }
  }

  /// Uniform random rotation (normalized quaternion of four gaussians).
  Eigen::Matrix3d rotation() {
    for (;;) {
      Eigen::Vector4d q(gaussian(), gaussian(), gaussian(), gaussian());
      double n = q.norm();
      if (n > 1e-12) {
        q /= n;
        return Eigen::Quaterniond(q(0), q(1), q(2), q(3)).toRotationMatrix();
      }
    }
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace poseflow
