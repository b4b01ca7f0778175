#pragma once

// Bingham distribution over unit quaternions,
//
//   B(q | V, Λ) = exp(qᵀ V Λ Vᵀ q) / F(Λ),   Λ = diag(λ1, λ2, λ3, 0), λ1 ≤ λ2 ≤ λ3 < 0,
//
// with a differentiable parameterization from a 7-vector seed (z1, z2), the
// normalizer and its λ-derivatives by Gauss-Legendre product quadrature,
// the closed-form entropy, and acceptance-rejection sampling with an angular
// central Gaussian envelope.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <string>
#include <vector>

#include "sipf/error.hpp"
#include "sipf/geometry.hpp"

namespace sipf {

/// Pre-activation parameters: z1 seeds V, z2 seeds Λ.
struct BinghamSeed {
  Vec4 z1 = Vec4(1.0, 0.0, 0.0, 0.0);
  Vec3 z2 = Vec3::Zero();

  /// Standard normal entries, z1 first.
  static BinghamSeed random(Rng& rng) {
    BinghamSeed s;
    for (int i = 0; i < 4; ++i) s.z1[i] = standard_normal(rng);
    for (int i = 0; i < 3; ++i) s.z2[i] = standard_normal(rng);
    return s;
  }
};

inline double softplus(double x) {
  // log(1 + e^x) without overflow for large x.
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Orthogonal V from a quaternion-like seed. The seed is normalized first and
/// placed into a fixed signed permutation pattern, so columns are orthonormal
/// by construction. The last column is the mode.
inline Mat4 birdal_V(const Vec4& z1) {
  const double n = z1.norm();
  if (!(n > 0.0) || !std::isfinite(n))
    throw Error(ErrorKind::invalid_argument, "z1 must be a nonzero finite 4-vector");
  const Vec4 u = z1 / n;
  const double a = u[0], b = u[1], c = u[2], d = u[3];
  Mat4 v;
  v << a, -b, -c, d,
       b, a, d, c,
       c, -d, a, -b,
       d, c, -b, -a;
  return v;
}

/// (λ1, λ2, λ3) as negative cumulative sums of softplus(z2).
inline Vec3 lambda_from(const Vec3& z2) {
  const double s1 = softplus(z2[0]), s2 = softplus(z2[1]), s3 = softplus(z2[2]);
  return {-(s1 + s2 + s3), -(s1 + s2), -s1};
}

/// Jacobian ∂λ/∂z2 (row i = λ_i).
inline Mat3 lambda_jacobian(const Vec3& z2) {
  const double g1 = sigmoid(z2[0]), g2 = sigmoid(z2[1]), g3 = sigmoid(z2[2]);
  Mat3 j;
  j << -g1, -g2, -g3,
       -g1, -g2, 0.0,
       -g1, 0.0, 0.0;
  return j;
}

class BinghamParams {
 public:
  BinghamParams(const Mat4& v, const Vec3& lambda) : v_(v), lambda_(lambda) {
    if (!v.allFinite() || (v.transpose() * v - Mat4::Identity()).cwiseAbs().maxCoeff() > 1e-10)
      throw Error(ErrorKind::invalid_argument, "V must be orthogonal");
    if (!lambda.allFinite() || !(lambda[0] <= lambda[1] && lambda[1] <= lambda[2] && lambda[2] < 0.0))
      throw Error(ErrorKind::invalid_argument, "need λ1 ≤ λ2 ≤ λ3 < 0");
  }

  static BinghamParams from_seed(const BinghamSeed& seed) {
    return BinghamParams(birdal_V(seed.z1), lambda_from(seed.z2));
  }

  const Mat4& V() const noexcept { return v_; }
  const Vec3& lambda() const noexcept { return lambda_; }
  /// The 4-vector diagonal (λ1, λ2, λ3, 0).
  Vec4 diagonal() const { return {lambda_[0], lambda_[1], lambda_[2], 0.0}; }
  /// C = V Λ Vᵀ, the quadratic form in the exponent.
  Mat4 concentration() const { return v_ * diagonal().asDiagonal() * v_.transpose(); }

 private:
  Mat4 v_;
  Vec3 lambda_;
};

inline double log_unnormalized_density(const UnitQuaternion& q, const BinghamParams& params) {
  const Vec4 y = params.V().transpose() * q.vec();
  return params.lambda()[0] * y[0] * y[0] + params.lambda()[1] * y[1] * y[1] +
         params.lambda()[2] * y[2] * y[2];
}

/// Column of V paired with the zero eigenvalue, as the canonical representative.
inline UnitQuaternion mode(const BinghamParams& params) {
  return UnitQuaternion(Vec4(params.V().col(3))).canonical();
}

/// True when q is within `tol` radians (geodesic on SO(3)) of the identity.
inline bool is_identity_rotation(const UnitQuaternion& q, double tol = 1e-9) {
  return geodesic_distance(quat_to_matrix(q), Rotation3::identity()) < tol;
}

// ---------------------------------------------------------------------------
// Normalization by quadrature

inline constexpr int kMinQuadratureOrder = 16;
inline constexpr int kDefaultQuadratureOrder = 48;

struct NormalizationResult {
  double F = 0.0;
  Vec3 gradF = Vec3::Zero();  ///< ∂F/∂λi = ∫ y_i² exp(·)
  Mat3 hessF = Mat3::Zero();  ///< ∂²F/∂λi∂λk = ∫ y_i² y_k² exp(·)
};

/// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration on P_n.
inline void gauss_legendre(int n, std::vector<double>& nodes, std::vector<double>& weights) {
  nodes.assign(static_cast<std::size_t>(n), 0.0);
  weights.assign(static_cast<std::size_t>(n), 0.0);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (x * p1 - p0) / (x * x - 1.0);
    }
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    nodes[static_cast<std::size_t>(i)] = -x;
    nodes[static_cast<std::size_t>(n - 1 - i)] = x;
    weights[static_cast<std::size_t>(i)] = w;
    weights[static_cast<std::size_t>(n - 1 - i)] = w;
  }
}

namespace detail {

/// Product grid on one sixteenth of S³ in eigen-coordinates: hyperspherical
/// angles ψ, θ, φ ∈ [0, π/2] with y4 = cos ψ. The integrand is even in every
/// coordinate, so weights absorb the factor 16 and the surface element.
struct SphereGrid {
  std::vector<Vec3> y2;  // (y1², y2², y3²)
  std::vector<double> w;
};

inline std::shared_ptr<const SphereGrid> sphere_grid(int order) {
  static std::mutex mu;
  static std::map<int, std::shared_ptr<const SphereGrid>> cache;
  std::lock_guard<std::mutex> lock(mu);
  if (auto it = cache.find(order); it != cache.end()) return it->second;

  std::vector<double> x, wx;
  gauss_legendre(order, x, wx);
  const double half = std::numbers::pi / 4.0;  // maps [-1,1] onto [0, π/2]
  std::vector<double> ang(x.size()), wang(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    ang[i] = half * (x[i] + 1.0);
    wang[i] = half * wx[i];
  }
  auto grid = std::make_shared<SphereGrid>();
  grid->y2.reserve(ang.size() * ang.size() * ang.size());
  grid->w.reserve(grid->y2.capacity());
  for (std::size_t a = 0; a < ang.size(); ++a) {
    const double s_psi = std::sin(ang[a]);
    for (std::size_t b = 0; b < ang.size(); ++b) {
      const double s_th = std::sin(ang[b]), c_th = std::cos(ang[b]);
      for (std::size_t c = 0; c < ang.size(); ++c) {
        const double s_ph = std::sin(ang[c]), c_ph = std::cos(ang[c]);
        const double y1 = s_psi * c_th, y2 = s_psi * s_th * c_ph, y3 = s_psi * s_th * s_ph;
        grid->y2.emplace_back(y1 * y1, y2 * y2, y3 * y3);
        grid->w.push_back(16.0 * wang[a] * wang[b] * wang[c] * s_psi * s_psi * s_th);
      }
    }
  }
  cache.emplace(order, grid);
  return grid;
}

}  // namespace detail

/// F(Λ) = ∫_{S³} exp(Σ λ_i y_i²) dq together with its first and second
/// λ-derivatives. Depends on Λ only.
inline NormalizationResult normalization(const Vec3& lambda, int order = kDefaultQuadratureOrder) {
  if (order < kMinQuadratureOrder)
    throw Error(ErrorKind::invalid_argument,
                "quadrature order must be at least " + std::to_string(kMinQuadratureOrder));
  const auto grid = detail::sphere_grid(order);
  NormalizationResult r;
  for (std::size_t i = 0; i < grid->w.size(); ++i) {
    const Vec3& y2 = grid->y2[i];
    const double e = grid->w[i] * std::exp(lambda.dot(y2));
    r.F += e;
    r.gradF += e * y2;
    r.hessF.noalias() += e * (y2 * y2.transpose());
  }
  return r;
}

inline NormalizationResult normalization(const BinghamParams& params,
                                         int order = kDefaultQuadratureOrder) {
  return normalization(params.lambda(), order);
}

/// h = log F - Λ·∇F / F.
inline double entropy(const Vec3& lambda, const NormalizationResult& n) {
  return std::log(n.F) - lambda.dot(n.gradF) / n.F;
}

inline double entropy(const BinghamParams& params, int order = kDefaultQuadratureOrder) {
  return entropy(params.lambda(), normalization(params, order));
}

/// ∂h/∂λ_k = -Σ_i λ_i (H_ik F - F_i F_k) / F².
inline Vec3 entropy_gradient_lambda(const Vec3& lambda, const NormalizationResult& n) {
  const Mat3 cov = n.hessF / n.F - (n.gradF * n.gradF.transpose()) / (n.F * n.F);
  return -(cov * lambda);
}

/// Negative log-likelihood -log B(q) = log F - qᵀ V Λ Vᵀ q.
inline double nll(const UnitQuaternion& q, const BinghamParams& params,
                  const NormalizationResult& n) {
  return std::log(n.F) - log_unnormalized_density(q, params);
}

/// Gradients of -log B(q) with respect to the seed (z1, z2).
inline void nll_gradient_seed(const UnitQuaternion& q, const BinghamSeed& seed,
                              const NormalizationResult& n, Vec4& d_z1, Vec3& d_z2) {
  const Mat4 v = birdal_V(seed.z1);
  const Vec3 lambda = lambda_from(seed.z2);
  const Vec4 qv = q.vec();
  const Vec4 y = v.transpose() * qv;
  const Vec3 d_lambda = n.gradF / n.F - Vec3(y[0] * y[0], y[1] * y[1], y[2] * y[2]);
  d_z2 = lambda_jacobian(seed.z2).transpose() * d_lambda;

  // dL/dV_{:,i} = -2 λ_i y_i q for i < 3; the mode column does not enter.
  Mat4 d_v = Mat4::Zero();
  for (int i = 0; i < 3; ++i) d_v.col(i) = -2.0 * lambda[i] * y[i] * qv;
  // V is linear in u = z1/|z1|; gather ∂L/∂u from the sign pattern.
  const Mat4& g = d_v;
  Vec4 d_u;
  d_u[0] = g(0, 0) + g(1, 1) + g(2, 2) - g(3, 3);
  d_u[1] = -g(0, 1) + g(1, 0) - g(2, 3) - g(3, 2);
  d_u[2] = -g(0, 2) + g(1, 3) + g(2, 0) + g(3, 1);
  d_u[3] = g(0, 3) + g(1, 2) - g(2, 1) + g(3, 0);
  const double norm = seed.z1.norm();
  const Vec4 u = seed.z1 / norm;
  d_z1 = (d_u - u * u.dot(d_u)) / norm;
}

// ---------------------------------------------------------------------------
// Sampling

struct SamplerOptions {
  double b = 1.0;
  double safety = 1.0001;
  std::size_t max_rounds = 100000;
  double min_acceptance = 1e-4;
  std::size_t min_proposals_before_stall = 1000000;
};

struct SampleStats {
  std::size_t proposals = 0;
  std::size_t accepted = 0;
  double envelope_bound = 0.0;
  double acceptance_rate() const {
    return proposals == 0 ? 0.0 : static_cast<double>(accepted) / static_cast<double>(proposals);
  }
};

/// sup over the sphere of exp(-z)(1 + 2z/b)², z = qᵀAq ∈ [0, a_max].
inline double acg_envelope_bound(double a_max, double b) {
  const double z = std::clamp((4.0 - b) / 2.0, 0.0, a_max);
  const double t = 1.0 + 2.0 * z / b;
  return std::exp(-z) * t * t;
}

/// Draws n quaternions with density ∝ exp(qᵀVΛVᵀq). Uses A = -VΛVᵀ so that
/// f*(q) = exp(-qᵀAq), an ACG envelope with Ψ⁻¹ = I + 2A/b, and batched
/// acceptance: each round proposes as many candidates as are still missing.
inline std::vector<UnitQuaternion> sample(const BinghamParams& params, Rng& rng, std::size_t n,
                                          const SamplerOptions& opt = {},
                                          SampleStats* stats_out = nullptr) {
  if (n < 1) throw Error(ErrorKind::invalid_argument, "sample count must be positive");
  const Vec4 a(-params.lambda()[0], -params.lambda()[1], -params.lambda()[2], 0.0);
  Vec4 sd;
  for (int i = 0; i < 4; ++i) sd[i] = 1.0 / std::sqrt(1.0 + 2.0 * a[i] / opt.b);
  SampleStats st;
  st.envelope_bound = opt.safety * acg_envelope_bound(a.maxCoeff(), opt.b);

  std::vector<UnitQuaternion> out;
  out.reserve(n);
  std::vector<Vec4> batch;
  for (std::size_t round = 0; out.size() < n; ++round) {
    if (round >= opt.max_rounds ||
        (st.proposals >= opt.min_proposals_before_stall &&
         st.acceptance_rate() < opt.min_acceptance))
      throw Error(ErrorKind::sampler_stall,
                  "acceptance rate " + std::to_string(st.acceptance_rate()) + " after " +
                      std::to_string(st.proposals) + " proposals (bound " +
                      std::to_string(st.envelope_bound) + ")");
    const std::size_t want = n - out.size();
    batch.clear();
    for (std::size_t i = 0; i < want; ++i) {
      Vec4 y;
      for (int c = 0; c < 4; ++c) y[c] = sd[c] * standard_normal(rng);
      batch.push_back(y);
    }
    for (const Vec4& y : batch) {
      const double u = uniform01(rng);
      ++st.proposals;
      const double yn2 = y.squaredNorm();
      if (!(yn2 > 0.0)) continue;
      const double z = a.dot(y.cwiseProduct(y)) / yn2;
      const double t = 1.0 + 2.0 * z / opt.b;
      if (u < std::exp(-z) * t * t / st.envelope_bound) {
        out.emplace_back(params.V() * (y / std::sqrt(yn2)));
        ++st.accepted;
      }
    }
  }
  if (stats_out) *stats_out = st;
  return out;
}

/// Great-circle distance on S³ modulo antipodes: arccos |⟨a, b⟩|.
inline double sphere_distance(const UnitQuaternion& a, const UnitQuaternion& b) {
  return std::acos(std::clamp(std::abs(a.vec().dot(b.vec())), 0.0, 1.0));
}

}  // namespace sipf
