#pragma once

// RIAttnConv: descriptor-driven kernel weights, scaled dot-product attention
// over the neighbourhood, max aggregation and a fused centre/neighbour update.
// Forward passes record what the backward pass needs.

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "sipf/descriptors.hpp"
#include "sipf/error.hpp"
#include "sipf/geometry.hpp"
#include "sipf/knn.hpp"
#include "sipf/lrf.hpp"

namespace sipf {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline constexpr double kLeakySlope = 0.01;

/// Learnable state of one layer.
///   kernel MLP  : R^8 -> R^hidden -> R^c_in   (affine, leaky ReLU, affine)
///   fusion g    : R^{2 c_in} -> R^c_out       (single affine map)
struct RIAttnLayer {
  std::size_t c_in = 0, c_out = 0, hidden = 0;
  MatrixXd w1;  // hidden × 8
  VectorXd b1;
  MatrixXd w2;  // c_in × hidden
  VectorXd b2;
  MatrixXd g;   // c_out × 2 c_in
  VectorXd gb;

  static RIAttnLayer zeros(std::size_t c_in, std::size_t c_out, std::size_t hidden = 0) {
    if (c_in < 1 || c_out < 1)
      throw Error(ErrorKind::invalid_argument, "layer widths must be positive");
    if (hidden == 0) hidden = c_in;
    RIAttnLayer l;
    l.c_in = c_in;
    l.c_out = c_out;
    l.hidden = hidden;
    const auto ci = static_cast<Eigen::Index>(c_in), co = static_cast<Eigen::Index>(c_out),
               h = static_cast<Eigen::Index>(hidden);
    l.w1 = MatrixXd::Zero(h, 8);
    l.b1 = VectorXd::Zero(h);
    l.w2 = MatrixXd::Zero(ci, h);
    l.b2 = VectorXd::Zero(ci);
    l.g = MatrixXd::Zero(co, 2 * ci);
    l.gb = VectorXd::Zero(co);
    return l;
  }

  /// Gaussian weights scaled by 1/sqrt(fan_in), zero biases.
  static RIAttnLayer random(std::size_t c_in, std::size_t c_out, Rng& rng, std::size_t hidden = 0) {
    RIAttnLayer l = zeros(c_in, c_out, hidden);
    auto fill = [&rng](MatrixXd& m) {
      const double s = 1.0 / std::sqrt(static_cast<double>(m.cols()));
      for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = s * standard_normal(rng);
    };
    fill(l.w1);
    fill(l.w2);
    fill(l.g);
    return l;
  }

  void check() const {
    const auto ci = static_cast<Eigen::Index>(c_in), co = static_cast<Eigen::Index>(c_out),
               h = static_cast<Eigen::Index>(hidden);
    if (w1.rows() != h || w1.cols() != 8 || b1.size() != h || w2.rows() != ci ||
        w2.cols() != h || b2.size() != ci || g.rows() != co || g.cols() != 2 * ci ||
        gb.size() != co)
      throw Error(ErrorKind::invalid_argument, "layer parameter shapes are inconsistent");
  }

  /// Visits (name, tensor) pairs in a fixed order.
  template <class F>
  void for_each_tensor(F&& f) {
    f("w1", w1); f("w2", w2); f("g", g);
    f("b1", b1); f("b2", b2); f("gb", gb);
  }
  template <class F>
  void for_each_tensor(F&& f) const {
    f("w1", w1); f("w2", w2); f("g", g);
    f("b1", b1); f("b2", b2); f("gb", gb);
  }
};

inline double leaky(double x) { return x > 0.0 ? x : kLeakySlope * x; }
inline double leaky_grad(double x) { return x > 0.0 ? 1.0 : kLeakySlope; }

/// Row j: kernel MLP applied to descriptor row j.
inline MatrixXd kernel_weights(const SipfStack& stack, const RIAttnLayer& layer,
                               MatrixXd* pre_activation = nullptr) {
  layer.check();
  if (stack.cols() != 8) throw Error(ErrorKind::invalid_argument, "descriptor stack must be k×8");
  MatrixXd pre = (stack * layer.w1.transpose()).rowwise() + layer.b1.transpose();
  MatrixXd out = (pre.unaryExpr(&leaky) * layer.w2.transpose()).rowwise() + layer.b2.transpose();
  if (pre_activation) *pre_activation = std::move(pre);
  return out;
}

/// Softmax(W Xᵀ / sqrt(c_in)) (W ⊙ X). Returns the k×c_in output; the k×k
/// attention matrix is written to `attention` when requested.
inline MatrixXd ri_attention(const MatrixXd& w, const MatrixXd& x, MatrixXd* attention = nullptr) {
  if (w.rows() != x.rows() || w.cols() != x.cols() || w.cols() < 1)
    throw Error(ErrorKind::invalid_argument, "attention operands must both be k×c_in");
  MatrixXd s = (w * x.transpose()) / std::sqrt(static_cast<double>(w.cols()));
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    if (!s.row(i).allFinite())
      throw Error(ErrorKind::numeric, "non-finite attention score in row " + std::to_string(i));
    const double m = s.row(i).maxCoeff();
    s.row(i) = (s.row(i).array() - m).exp();
    s.row(i) /= s.row(i).sum();
  }
  MatrixXd out = s * w.cwiseProduct(x);
  if (attention) *attention = std::move(s);
  return out;
}

/// g((max_j attn_j - x_r) ⊕ x_r). `argmax` receives, per channel, the row
/// that won the max (lowest index on ties).
inline VectorXd reversed_edgeconv(const MatrixXd& attn_out, const VectorXd& x_r,
                                  const RIAttnLayer& layer,
                                  std::vector<Eigen::Index>* argmax = nullptr) {
  layer.check();
  const auto c = static_cast<Eigen::Index>(layer.c_in);
  if (attn_out.cols() != c || x_r.size() != c || attn_out.rows() < 1)
    throw Error(ErrorKind::invalid_argument, "edge-conv input shapes are inconsistent");
  VectorXd pooled(c);
  if (argmax) argmax->assign(static_cast<std::size_t>(c), 0);
  for (Eigen::Index m = 0; m < c; ++m) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < attn_out.rows(); ++j)
      if (attn_out(j, m) > attn_out(best, m)) best = j;
    pooled[m] = attn_out(best, m);
    if (argmax) (*argmax)[static_cast<std::size_t>(m)] = best;
  }
  VectorXd z(2 * c);
  z << pooled - x_r, x_r;
  return layer.g * z + layer.gb;
}

/// Everything recorded for one reference point.
struct PointActivation {
  std::vector<std::size_t> neighbors;
  SipfStack stack;       // P_r, k×8
  MatrixXd pre;          // kernel MLP hidden pre-activation, k×hidden
  MatrixXd weights;      // W_r, k×c_in
  MatrixXd x;            // X_r, k×c_in
  MatrixXd attention;    // k×k, rows sum to 1
  MatrixXd attn_out;     // k×c_in
  std::vector<Eigen::Index> argmax;
  VectorXd fused_input;  // (x̂ - x_r) ⊕ x_r
  VectorXd out;          // x'_r
};

struct LayerForward {
  MatrixXd out;  // N×c_out
  std::vector<PointActivation> points;
};

/// Descriptor stacks for every point of a cloud.
inline std::vector<SipfStack> sipf_stacks(const PointCloud& cloud,
                                          const std::vector<LocalFrame>& frames,
                                          const NeighborGraph& graph, const ShadowCloud& shadow,
                                          DescriptorMask mask = DescriptorMask::sipf) {
  std::vector<SipfStack> out;
  out.reserve(cloud.size());
  for (std::size_t r = 0; r < cloud.size(); ++r)
    out.push_back(sipf_stack(cloud, frames, graph, shadow, r, mask));
  return out;
}

/// Layer forward pass from precomputed descriptor stacks.
inline LayerForward riattnconv_forward(const std::vector<SipfStack>& stacks,
                                       const NeighborGraph& graph, const MatrixXd& features,
                                       const RIAttnLayer& layer) {
  layer.check();
  const std::size_t n = stacks.size();
  if (graph.size() != n || static_cast<std::size_t>(features.rows()) != n ||
      features.cols() != static_cast<Eigen::Index>(layer.c_in))
    throw Error(ErrorKind::invalid_argument, "features, graph and stacks are not index-aligned");
  LayerForward f;
  f.out.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(layer.c_out));
  f.points.resize(n);
  const auto k = static_cast<Eigen::Index>(graph.k());
  for (std::size_t r = 0; r < n; ++r) {
    PointActivation& a = f.points[r];
    a.neighbors = graph.row(r);
    a.stack = stacks[r];
    a.weights = kernel_weights(a.stack, layer, &a.pre);
    a.x.resize(k, features.cols());
    for (Eigen::Index j = 0; j < k; ++j)
      a.x.row(j) = features.row(static_cast<Eigen::Index>(a.neighbors[static_cast<std::size_t>(j)]));
    try {
      a.attn_out = ri_attention(a.weights, a.x, &a.attention);
    } catch (const Error& e) {
      throw e.at(r);
    }
    const VectorXd x_r = features.row(static_cast<Eigen::Index>(r)).transpose();
    a.out = reversed_edgeconv(a.attn_out, x_r, layer, &a.argmax);
    const auto c = static_cast<Eigen::Index>(layer.c_in);
    a.fused_input.resize(2 * c);
    for (Eigen::Index m = 0; m < c; ++m)
      a.fused_input[m] = a.attn_out(a.argmax[static_cast<std::size_t>(m)], m) - x_r[m];
    a.fused_input.tail(c) = x_r;
    f.out.row(static_cast<Eigen::Index>(r)) = a.out.transpose();
  }
  return f;
}

/// Layer forward pass from geometry: descriptor stacks, kernel weights,
/// attention, then reversed edge convolution per point.
inline LayerForward riattnconv_forward(const PointCloud& cloud,
                                       const std::vector<LocalFrame>& frames,
                                       const NeighborGraph& graph, const ShadowCloud& shadow,
                                       const MatrixXd& features, const RIAttnLayer& layer,
                                       DescriptorMask mask = DescriptorMask::sipf) {
  return riattnconv_forward(sipf_stacks(cloud, frames, graph, shadow, mask), graph, features,
                            layer);
}

struct LayerGrad {
  RIAttnLayer params;  // same shapes as the layer
  MatrixXd features;   // N×c_in
};

/// Reverse pass for d(loss)/d(out). Gradients are accumulated point by point
/// in index order, so results do not depend on scheduling.
inline LayerGrad backward(const RIAttnLayer& layer, const LayerForward& fwd,
                          const MatrixXd& d_out) {
  const auto n = static_cast<Eigen::Index>(fwd.points.size());
  const auto c = static_cast<Eigen::Index>(layer.c_in);
  if (d_out.rows() != n || d_out.cols() != static_cast<Eigen::Index>(layer.c_out))
    throw Error(ErrorKind::invalid_argument, "output gradient has the wrong shape");
  LayerGrad grad{RIAttnLayer::zeros(layer.c_in, layer.c_out, layer.hidden), MatrixXd::Zero(n, c)};
  RIAttnLayer& gp = grad.params;
  const double scale = 1.0 / std::sqrt(static_cast<double>(c));

  for (Eigen::Index r = 0; r < n; ++r) {
    const PointActivation& a = fwd.points[static_cast<std::size_t>(r)];
    const VectorXd dy = d_out.row(r).transpose();
    gp.g.noalias() += dy * a.fused_input.transpose();
    gp.gb += dy;
    const VectorXd dz = layer.g.transpose() * dy;
    const VectorXd d_pooled = dz.head(c);
    grad.features.row(r) += (dz.tail(c) - d_pooled).transpose();

    const Eigen::Index k = a.attn_out.rows();
    MatrixXd d_attn_out = MatrixXd::Zero(k, c);
    for (Eigen::Index m = 0; m < c; ++m) d_attn_out(a.argmax[static_cast<std::size_t>(m)], m) = d_pooled[m];

    const MatrixXd values = a.weights.cwiseProduct(a.x);
    const MatrixXd d_att = d_attn_out * values.transpose();
    const MatrixXd d_values = a.attention.transpose() * d_attn_out;
    MatrixXd d_scores(k, k);
    for (Eigen::Index i = 0; i < k; ++i) {
      const double dot = d_att.row(i).dot(a.attention.row(i));
      d_scores.row(i) = ((d_att.row(i).array() - dot) * a.attention.row(i).array()).matrix();
    }
    MatrixXd d_w = scale * (d_scores * a.x) + d_values.cwiseProduct(a.x);
    const MatrixXd d_x = scale * (d_scores.transpose() * a.weights) + d_values.cwiseProduct(a.weights);
    for (Eigen::Index j = 0; j < k; ++j)
      grad.features.row(static_cast<Eigen::Index>(a.neighbors[static_cast<std::size_t>(j)])) += d_x.row(j);

    const MatrixXd hidden = a.pre.unaryExpr(&leaky);
    gp.w2.noalias() += d_w.transpose() * hidden;
    gp.b2 += d_w.colwise().sum().transpose();
    const MatrixXd d_pre = (d_w * layer.w2).cwiseProduct(a.pre.unaryExpr(&leaky_grad));
    gp.w1.noalias() += d_pre.transpose() * a.stack;
    gp.b1 += d_pre.colwise().sum().transpose();
  }
  return grad;
}

// ---------------------------------------------------------------------------
// Loss

inline constexpr double kAbsSmoothing = 1e-12;
inline constexpr double kDefaultDelta = 0.8;

/// L_task + δ |L_bingham - 0.1 L_task|, with |d| taken as sqrt(d² + ε) so
/// the seed gradient stays finite at the kink.
inline double total_loss(double task_loss, double bingham_loss, double delta) {
  if (delta < 0.0) throw Error(ErrorKind::invalid_argument, "delta must be non-negative");
  const double d = bingham_loss - 0.1 * task_loss;
  return task_loss + delta * std::sqrt(d * d + kAbsSmoothing);
}

struct TotalLossGrad {
  double d_task = 0.0;
  double d_bingham = 0.0;
};

inline TotalLossGrad total_loss_grad(double task_loss, double bingham_loss, double delta) {
  const double d = bingham_loss - 0.1 * task_loss;
  const double s = d / std::sqrt(d * d + kAbsSmoothing);
  return {1.0 - 0.1 * delta * s, delta * s};
}

}  // namespace sipf
