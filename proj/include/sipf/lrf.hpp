#pragma once

// Local reference frames and the centroid-relative input descriptor.

#include <cmath>
#include <cstddef>
#include <vector>

#include "sipf/error.hpp"
#include "sipf/geometry.hpp"
#include "sipf/knn.hpp"

namespace sipf {

/// Orthonormal right-handed frame; rows are the axes ∂¹, ∂², ∂³.
struct LocalFrame {
  Mat3 axes = Mat3::Identity();

  Vec3 primary() const { return axes.row(0).transpose(); }
  Vec3 axis(int i) const { return axes.row(i).transpose(); }

  /// Frame transported by a right-multiplied rotation: each axis becomes ∂ * R.
  LocalFrame rotated(const Rotation3& r) const { return LocalFrame{axes * r.matrix()}; }
};

enum class FrameMode { normal_based, barycenter_based };

/// m_i - p_i, where m_i is the mean of the k neighbours of point i.
inline Vec3 barycenter_axis(const PointCloud& cloud, const NeighborGraph& graph, std::size_t i) {
  if (i >= cloud.size() || i >= graph.size())
    throw Error(ErrorKind::invalid_argument, "point index out of range", i);
  Vec3 mean = Vec3::Zero();
  for (std::size_t j = 0; j < graph.k(); ++j) mean += cloud.point(graph(i, j));
  mean /= static_cast<double>(graph.k());
  const Vec3 axis = mean - cloud.point(i);
  if (axis.norm() <= 1e-12 * (1.0 + cloud.point(i).norm()))
    throw Error(ErrorKind::degenerate_geometry, "point coincides with its neighbour barycenter", i);
  return axis;
}

/// Gram-Schmidt: ∂¹ = e1/|e1|, ∂³ = ∂¹×e2/|∂¹×e2|, ∂² = ∂³×∂¹.
inline LocalFrame build_lrf(const Vec3& e1, const Vec3& e2) {
  const double n1 = e1.norm(), n2 = e2.norm();
  if (!(n1 > 0.0) || !(n2 > 0.0) || !std::isfinite(n1) || !std::isfinite(n2))
    throw Error(ErrorKind::degenerate_frame, "frame generator has zero length");
  const Vec3 d1 = e1 / n1;
  const Vec3 cross = d1.cross(e2);
  // |d1 × e2| / |e2| is the sine of the angle between the generators.
  if (cross.norm() / n2 < 1e-7)
    throw Error(ErrorKind::degenerate_frame, "frame generators are parallel");
  const Vec3 d3 = cross.normalized();
  const Vec3 d2 = d3.cross(d1);
  LocalFrame f;
  f.axes.row(0) = d1.transpose();
  f.axes.row(1) = d2.transpose();
  f.axes.row(2) = d3.transpose();
  return f;
}

/// Frame of point i. Normal-based: (n_i, m_i - p_i). Barycenter-based, for
/// coordinate-only input: (m_i - p_i, p_i - O) with O the centroid.
inline LocalFrame build_point_lrf(const PointCloud& cloud, const NeighborGraph& graph,
                                  const Vec3& centroid, std::size_t i, FrameMode mode) {
  if (mode == FrameMode::normal_based && !cloud.has_normals())
    throw Error(ErrorKind::invalid_argument, "normal-based frames need normals");
  try {
    const Vec3 bary = barycenter_axis(cloud, graph, i);
    if (mode == FrameMode::normal_based) return build_lrf(cloud.normals()[i], bary);
    return build_lrf(bary, cloud.point(i) - centroid);
  } catch (const Error& e) {
    throw e.at(i);
  }
}

inline std::vector<LocalFrame> build_all_lrfs(const PointCloud& cloud, const NeighborGraph& graph,
                                              FrameMode mode) {
  const Vec3 centroid = cloud.centroid();
  std::vector<LocalFrame> frames;
  frames.reserve(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i)
    frames.push_back(build_point_lrf(cloud, graph, centroid, i, mode));
  return frames;
}

inline FrameMode default_frame_mode(const PointCloud& cloud) {
  return cloud.has_normals() ? FrameMode::normal_based : FrameMode::barycenter_based;
}

struct InputDescriptor {
  double radius = 0.0;  ///< |O→p|
  double sin = 0.0;     ///< sin ∠(∂¹, O→p)
  double cos = 1.0;     ///< cos ∠(∂¹, O→p)
};

/// Per-point (|O→p|, sin, cos) against the primary axis. A point sitting on
/// the centroid gets (0, 0, 1).
inline std::vector<InputDescriptor> input_descriptor(const PointCloud& cloud,
                                                     const std::vector<LocalFrame>& frames) {
  if (frames.size() != cloud.size())
    throw Error(ErrorKind::invalid_argument, "frames and cloud differ in length");
  const Vec3 centroid = cloud.centroid();
  std::vector<InputDescriptor> out;
  out.reserve(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3 v = cloud.point(i) - centroid;
    const double r = v.norm();
    if (r == 0.0) {
      out.push_back({0.0, 0.0, 1.0});
      continue;
    }
    const Vec3 d1 = frames[i].primary();
    // atan2 keeps sin and cos consistent to rounding and sin ≥ 0.
    const double angle = std::atan2(d1.cross(v).norm(), d1.dot(v));
    out.push_back({r, std::sin(angle), std::cos(angle)});
  }
  return out;
}

}  // namespace sipf
