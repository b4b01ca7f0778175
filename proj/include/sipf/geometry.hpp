#pragma once

// Point containers and rotation algebra.
//
// Points are row vectors. A rotation R acts on a point as p * R, so every
// stored matrix is the right-multiplication operator. quat_to_matrix returns
// the textbook (column-vector) matrix of the quaternion; applied on the right
// it therefore rotates by the inverse of q. Invariance properties do not care
// which of the two is used as long as it is used consistently.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <random>
#include <utility>
#include <vector>

#include "sipf/error.hpp"

namespace sipf {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec4 = Eigen::Vector4d;
using Mat4 = Eigen::Matrix4d;

/// Row-vector right multiplication p * R, written for column storage.
inline Vec3 rotate(const Vec3& p, const Mat3& r) { return r.transpose() * p; }

class PointCloud {
 public:
  PointCloud() = default;

  explicit PointCloud(std::vector<Vec3> points,
                      std::optional<std::vector<Vec3>> normals = std::nullopt)
      : points_(std::move(points)), normals_(std::move(normals)) {
    validate();
  }

  std::size_t size() const noexcept { return points_.size(); }
  const std::vector<Vec3>& points() const noexcept { return points_; }
  const Vec3& point(std::size_t i) const { return points_[i]; }
  bool has_normals() const noexcept { return normals_.has_value(); }
  const std::vector<Vec3>& normals() const {
    if (!normals_) throw Error(ErrorKind::invalid_argument, "cloud has no normals");
    return *normals_;
  }

  Vec3 centroid() const {
    Vec3 sum = Vec3::Zero();
    for (const auto& p : points_) sum += p;
    return sum / static_cast<double>(points_.size());
  }

 private:
  void validate() const {
    if (points_.size() < 2)
      throw Error(ErrorKind::invalid_input, "point cloud needs at least 2 points");
    for (std::size_t i = 0; i < points_.size(); ++i)
      if (!points_[i].allFinite())
        throw Error(ErrorKind::invalid_input, "non-finite coordinate", i);
    if (!normals_) return;
    if (normals_->size() != points_.size())
      throw Error(ErrorKind::invalid_input, "normals and points differ in length");
    for (std::size_t i = 0; i < normals_->size(); ++i) {
      const Vec3& n = (*normals_)[i];
      if (!n.allFinite() || std::abs(n.norm() - 1.0) > 1e-9)
        throw Error(ErrorKind::invalid_input, "normal is not unit length", i);
    }
  }

  std::vector<Vec3> points_;
  std::optional<std::vector<Vec3>> normals_;
};

/// Scalar-first unit quaternion. q and -q are the same rotation.
struct UnitQuaternion {
  double w = 1.0, x = 0.0, y = 0.0, z = 0.0;

  UnitQuaternion() = default;
  UnitQuaternion(double w_, double x_, double y_, double z_) : w(w_), x(x_), y(y_), z(z_) {}
  explicit UnitQuaternion(const Vec4& v) : w(v[0]), x(v[1]), y(v[2]), z(v[3]) {}

  Vec4 vec() const { return {w, x, y, z}; }
  double norm() const { return vec().norm(); }

  static UnitQuaternion normalized(const Vec4& v) {
    const double n = v.norm();
    if (!(n > 0.0) || !std::isfinite(n))
      throw Error(ErrorKind::invalid_argument, "cannot normalize a zero quaternion");
    return UnitQuaternion(v / n);
  }

  /// Representative with w > 0, or the first nonzero component positive when w == 0.
  UnitQuaternion canonical() const {
    const Vec4 v = vec();
    for (int i = 0; i < 4; ++i) {
      if (v[i] > 0.0) return *this;
      if (v[i] < 0.0) return UnitQuaternion(-v);
    }
    return *this;
  }
};

class Rotation3 {
 public:
  Rotation3() : m_(Mat3::Identity()) {}

  /// Checks orthogonality and det = +1 within `tol`.
  explicit Rotation3(const Mat3& m, double tol = 1e-10) : m_(m) {
    if (!m.allFinite() || (m.transpose() * m - Mat3::Identity()).cwiseAbs().maxCoeff() > tol ||
        std::abs(m.determinant() - 1.0) > tol)
      throw Error(ErrorKind::invalid_input, "matrix is not a proper rotation");
  }

  static Rotation3 identity() { return Rotation3(); }

  /// Rotation by `angle` radians about `axis` (column-vector convention).
  static Rotation3 axis_angle(const Vec3& axis, double angle) {
    return Rotation3(Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix());
  }

  const Mat3& matrix() const noexcept { return m_; }
  double operator()(int r, int c) const { return m_(r, c); }

  Rotation3 transpose() const { return from_trusted(m_.transpose()); }
  /// Matrix product; p * (a * b) = (p * a) * b.
  friend Rotation3 operator*(const Rotation3& a, const Rotation3& b) {
    return from_trusted(a.m_ * b.m_);
  }

 private:
  static Rotation3 from_trusted(const Mat3& m) {
    Rotation3 r;
    r.m_ = m;
    return r;
  }
  Mat3 m_;
};

inline Vec3 rotate(const Vec3& p, const Rotation3& r) { return rotate(p, r.matrix()); }

inline Rotation3 quat_to_matrix(const UnitQuaternion& q) {
  if (std::abs(q.norm() - 1.0) > 1e-6)
    throw Error(ErrorKind::invalid_input, "quaternion is not normalized");
  const Vec4 u = q.vec().normalized();
  const double w = u[0], x = u[1], y = u[2], z = u[3];
  Mat3 m;
  m << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return Rotation3(m);
}

/// Shepperd's method: pivot on the largest of (trace, diagonal entries).
inline UnitQuaternion matrix_to_quat(const Mat3& r) {
  if (!r.allFinite() || (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6 ||
      std::abs(r.determinant() - 1.0) > 1e-6)
    throw Error(ErrorKind::invalid_input, "matrix is not orthogonal");
  const double tr = r.trace();
  Vec4 q;
  if (tr >= r(0, 0) && tr >= r(1, 1) && tr >= r(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + tr);
    q << 0.25 * s, (r(2, 1) - r(1, 2)) / s, (r(0, 2) - r(2, 0)) / s, (r(1, 0) - r(0, 1)) / s;
  } else if (r(0, 0) >= r(1, 1) && r(0, 0) >= r(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + r(0, 0) - r(1, 1) - r(2, 2));
    q << (r(2, 1) - r(1, 2)) / s, 0.25 * s, (r(0, 1) + r(1, 0)) / s, (r(0, 2) + r(2, 0)) / s;
  } else if (r(1, 1) >= r(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + r(1, 1) - r(0, 0) - r(2, 2));
    q << (r(0, 2) - r(2, 0)) / s, (r(0, 1) + r(1, 0)) / s, 0.25 * s, (r(1, 2) + r(2, 1)) / s;
  } else {
    const double s = 2.0 * std::sqrt(1.0 + r(2, 2) - r(0, 0) - r(1, 1));
    q << (r(1, 0) - r(0, 1)) / s, (r(0, 2) + r(2, 0)) / s, (r(1, 2) + r(2, 1)) / s, 0.25 * s;
  }
  return UnitQuaternion(q.normalized()).canonical();
}

inline UnitQuaternion matrix_to_quat(const Rotation3& r) { return matrix_to_quat(r.matrix()); }

/// Right-multiplies every point and normal by R.
inline PointCloud apply_rotation(const PointCloud& cloud, const Rotation3& r) {
  std::vector<Vec3> pts;
  pts.reserve(cloud.size());
  for (const auto& p : cloud.points()) pts.push_back(rotate(p, r));
  if (!cloud.has_normals()) return PointCloud(std::move(pts));
  std::vector<Vec3> nrm;
  nrm.reserve(cloud.size());
  for (const auto& n : cloud.normals()) nrm.push_back(rotate(n, r).normalized());
  return PointCloud(std::move(pts), std::move(nrm));
}

using Rng = std::mt19937_64;

/// Standard normal draw via Box-Muller on two 53-bit uniforms. Spelled out so
/// the stream is identical across standard libraries.
inline double standard_normal(Rng& rng) {
  constexpr double two_pi = 6.283185307179586476925286766559;
  const double u1 = (static_cast<double>(rng() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
  const double u2 = static_cast<double>(rng() >> 11) * 0x1.0p-53;          // [0, 1)
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
}

/// Uniform draw in [0, 1).
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Uniform on SO(3): normalized 4-Gaussian quaternion.
inline UnitQuaternion random_quaternion(Rng& rng) {
  for (;;) {
    Vec4 v(standard_normal(rng), standard_normal(rng), standard_normal(rng),
           standard_normal(rng));
    if (v.norm() > 1e-12) return UnitQuaternion(v.normalized());
  }
}

inline Rotation3 random_rotation(Rng& rng) { return quat_to_matrix(random_quaternion(rng)); }

/// Geodesic distance on SO(3): the angle θ ∈ [0, π] with cos θ = (tr(AᵀB) - 1) / 2.
/// Evaluated through atan2 of (sin θ, cos θ) so small angles keep full precision.
inline double geodesic_distance(const Rotation3& a, const Rotation3& b) {
  const Mat3 m = a.matrix().transpose() * b.matrix();
  const double c = (m.trace() - 1.0) / 2.0;
  const Vec3 axis(m(2, 1) - m(1, 2), m(0, 2) - m(2, 0), m(1, 0) - m(0, 1));
  return std::atan2(axis.norm() / 2.0, std::clamp(c, -1.0, 1.0));
}

}  // namespace sipf
