#pragma once

// Point pair features, the shadow-informed difference feature and the 8-D
// descriptor built from them, plus scores for the two shadow degeneracies.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "sipf/error.hpp"
#include "sipf/geometry.hpp"
#include "sipf/knn.hpp"
#include "sipf/lrf.hpp"

namespace sipf {

using Ppf4 = Eigen::Vector4d;
using Sippf4 = Eigen::Vector4d;
using Sipf8 = Eigen::Matrix<double, 8, 1>;
using SipfStack = Eigen::Matrix<double, Eigen::Dynamic, 8, Eigen::RowMajor>;

/// Pre-normalization norms below this make the shadow term the zero vector.
inline constexpr double kSippfZeroThreshold = 1e-12;
inline constexpr double kCoincidenceThreshold = 1e-12;

/// Which part of the 8-D descriptor is kept. `ppf_only` zeroes the shadow
/// block; `sipf_no_direction` keeps only the length of the shadow difference
/// in slot 4 and zeroes slots 5..7.
enum class DescriptorMask { sipf, ppf_only, sipf_no_direction };

inline std::string_view to_string(DescriptorMask m) {
  switch (m) {
    case DescriptorMask::sipf: return "sipf";
    case DescriptorMask::ppf_only: return "ppf";
    case DescriptorMask::sipf_no_direction: return "sipf-no-direction";
  }
  return "sipf";
}

inline DescriptorMask parse_mask(std::string_view s) {
  if (s == "sipf") return DescriptorMask::sipf;
  if (s == "ppf") return DescriptorMask::ppf_only;
  if (s == "sipf-no-direction") return DescriptorMask::sipf_no_direction;
  throw Error(ErrorKind::invalid_argument, "unknown descriptor mask '" + std::string(s) + "'");
}

struct OrientedPoint {
  Vec3 position;
  LocalFrame frame;
};

namespace detail {
inline double cos_between(const Vec3& a, const Vec3& b) {
  return std::clamp(a.dot(b) / (a.norm() * b.norm()), -1.0, 1.0);
}
}  // namespace detail

/// (|d|, cos∠(∂¹_r, d), cos∠(∂¹_j, d), cos∠(∂¹_r, ∂¹_j)) with d = p_j - p_r.
inline Ppf4 ppf(const Vec3& p_r, const LocalFrame& frame_r, const Vec3& p_j,
                const LocalFrame& frame_j) {
  const Vec3 d = p_j - p_r;
  const double len = d.norm();
  if (!(len > kCoincidenceThreshold))
    throw Error(ErrorKind::coincident_point, "point pair feature of coincident points");
  const Vec3 a_r = frame_r.primary(), a_j = frame_j.primary();
  return {len, detail::cos_between(a_r, d), detail::cos_between(a_j, d),
          detail::cos_between(a_r, a_j)};
}

inline Ppf4 ppf(const OrientedPoint& r, const OrientedPoint& j) {
  return ppf(r.position, r.frame, j.position, j.frame);
}

/// Un-normalized PPF(p_r, p_r') - PPF(p_j, p_r').
inline Eigen::Vector4d shadow_difference(const OrientedPoint& r, const OrientedPoint& j,
                                         const OrientedPoint& shadow) {
  return ppf(r, shadow) - ppf(j, shadow);
}

/// Unit-length shadow difference, or exactly zero when the difference vanishes.
inline Sippf4 sippf(const OrientedPoint& r, const OrientedPoint& j, const OrientedPoint& shadow) {
  const Eigen::Vector4d diff = shadow_difference(r, j, shadow);
  const double n = diff.norm();
  if (n < kSippfZeroThreshold) return Sippf4::Zero();
  return diff / n;
}

inline Sipf8 compute_sipf(const OrientedPoint& r, const OrientedPoint& j, const OrientedPoint& shadow,
                          DescriptorMask mask = DescriptorMask::sipf) {
  Sipf8 out = Sipf8::Zero();
  out.head<4>() = ppf(r, j);
  switch (mask) {
    case DescriptorMask::sipf:
      out.tail<4>() = sippf(r, j, shadow);
      break;
    case DescriptorMask::ppf_only:
      break;
    case DescriptorMask::sipf_no_direction:
      out[4] = shadow_difference(r, j, shadow).norm();
      break;
  }
  return out;
}

/// Shadow points p' = p R_g with frames transported as L R_g.
struct ShadowCloud {
  std::vector<Vec3> points;
  std::vector<LocalFrame> frames;
  Rotation3 rotation;

  OrientedPoint at(std::size_t i) const { return {points[i], frames[i]}; }
};

inline ShadowCloud shadow_of(const PointCloud& cloud, const std::vector<LocalFrame>& frames,
                             const Rotation3& rg) {
  if (frames.size() != cloud.size())
    throw Error(ErrorKind::invalid_argument, "frames and cloud differ in length");
  ShadowCloud s{{}, {}, rg};
  s.points.reserve(cloud.size());
  s.frames.reserve(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    s.points.push_back(rotate(cloud.point(i), rg));
    s.frames.push_back(frames[i].rotated(rg));
  }
  return s;
}

/// k×8 stack: row j is the descriptor of (r, graph(r, j)) in graph order.
inline SipfStack sipf_stack(const PointCloud& cloud, const std::vector<LocalFrame>& frames,
                            const NeighborGraph& graph, const ShadowCloud& shadow, std::size_t r,
                            DescriptorMask mask = DescriptorMask::sipf) {
  if (r >= graph.size()) throw Error(ErrorKind::invalid_argument, "reference index out of range", r);
  const OrientedPoint ref{cloud.point(r), frames[r]};
  const OrientedPoint sh = shadow.at(r);
  SipfStack out(static_cast<Eigen::Index>(graph.k()), 8);
  for (std::size_t j = 0; j < graph.k(); ++j) {
    const std::size_t nb = graph(r, j);
    try {
      out.row(static_cast<Eigen::Index>(j)) =
          compute_sipf(ref, {cloud.point(nb), frames[nb]}, sh, mask).transpose();
    } catch (const Error& e) {
      throw e.at(r);
    }
  }
  return out;
}

/// |cos∠(p_r' - p_r, ∂¹_r)| · |cos∠(∂¹_r, ∂¹_r')|; 1 is the fully aligned case.
inline double detect_axis_alignment(const OrientedPoint& r, const OrientedPoint& shadow) {
  const Vec3 d = shadow.position - r.position;
  if (!(d.norm() > 0.0)) return 1.0;
  return std::abs(detail::cos_between(d, r.frame.primary())) *
         std::abs(detail::cos_between(r.frame.primary(), shadow.frame.primary()));
}

/// Geodesic angle between the shadow rotation and a local patch rotation; 0
/// means the two coincide.
inline double detect_local_coincidence(const Rotation3& rg, const Rotation3& rj) {
  return geodesic_distance(rg, rj);
}

}  // namespace sipf
