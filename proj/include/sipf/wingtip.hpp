#pragma once

// Synthetic "two wings and a fuselage" clouds. The right half is the left
// half rotated by R_sym (π about z), so every left point has a right twin
// with an identical local neighbourhood up to that rotation. Only global pose
// tells the halves apart.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "sipf/error.hpp"
#include "sipf/geometry.hpp"

namespace sipf {

enum : int { kLeft = 0, kRight = 1 };

struct LabeledCloud {
  PointCloud cloud;
  std::vector<int> labels;
  Rotation3 symmetry;  ///< R_sym; point i + half is point i * R_sym before noise
  std::size_t half = 0;
};

namespace detail {

// Wing surface z = h(x, y) over x ∈ [-2.6, -1.3], y ∈ [-0.5, 0.5].
inline double wing_height(double x, double y) {
  return 0.25 * std::sin(2.1 * x + 0.4) + 0.2 * y * y + 0.15 * x * y;
}
inline Vec3 wing_normal(double x, double y) {
  const double hx = 0.25 * 2.1 * std::cos(2.1 * x + 0.4) + 0.15 * y;
  const double hy = 0.4 * y + 0.15 * x;
  return Vec3(-hx, -hy, 1.0).normalized();
}

// Fuselage strip over x ∈ [-1.25, -0.1], y ∈ [-0.12, 0.12].
inline double body_height(double x, double y) { return 0.1 * std::cos(1.5 * x) - 0.8 * y * y; }
inline Vec3 body_normal(double x, double y) {
  const double hx = -0.15 * std::sin(1.5 * x);
  const double hy = -1.6 * y;
  return Vec3(-hx, -hy, 1.0).normalized();
}

}  // namespace detail

/// `points_per_cloud` must be even and at least 32. A quarter of each half
/// (rounded down) is fuselage; its points carry the label of their side.
inline std::vector<LabeledCloud> make_wingtip_dataset(std::size_t n_clouds,
                                                      std::size_t points_per_cloud,
                                                      double noise_sigma, std::uint64_t seed) {
  if (points_per_cloud < 32 || points_per_cloud % 2 != 0)
    throw Error(ErrorKind::invalid_argument, "points_per_cloud must be even and at least 32");
  if (n_clouds < 1) throw Error(ErrorKind::invalid_argument, "need at least one cloud");
  if (noise_sigma < 0.0) throw Error(ErrorKind::invalid_argument, "noise_sigma must be >= 0");

  Rng rng(seed);
  // π about z, written exactly: (x, y, z) -> (-x, -y, z).
  Mat3 flip = Mat3::Zero();
  flip(0, 0) = -1.0;
  flip(1, 1) = -1.0;
  flip(2, 2) = 1.0;
  const Rotation3 r_sym(flip);

  const std::size_t half = points_per_cloud / 2;
  const std::size_t body = half / 4;
  std::vector<LabeledCloud> out;
  out.reserve(n_clouds);
  for (std::size_t c = 0; c < n_clouds; ++c) {
    std::vector<Vec3> pts(points_per_cloud), nrm(points_per_cloud);
    for (std::size_t i = 0; i < half; ++i) {
      Vec3 p, n;
      if (i < half - body) {
        const double x = -2.6 + 1.3 * uniform01(rng), y = -0.5 + uniform01(rng);
        p = Vec3(x, y, detail::wing_height(x, y));
        n = detail::wing_normal(x, y);
      } else {
        const double x = -1.25 + 1.15 * uniform01(rng), y = -0.12 + 0.24 * uniform01(rng);
        p = Vec3(x, y, detail::body_height(x, y));
        n = detail::body_normal(x, y);
      }
      pts[i] = p;
      nrm[i] = n;
      pts[i + half] = flip * p;
      nrm[i + half] = flip * n;
    }
    if (noise_sigma > 0.0)
      for (auto& p : pts)
        for (int d = 0; d < 3; ++d) p[d] += noise_sigma * standard_normal(rng);

    std::vector<int> labels(points_per_cloud, kLeft);
    for (std::size_t i = half; i < points_per_cloud; ++i) labels[i] = kRight;
    out.push_back({PointCloud(std::move(pts), std::move(nrm)), std::move(labels), r_sym, half});
  }
  return out;
}

}  // namespace sipf
