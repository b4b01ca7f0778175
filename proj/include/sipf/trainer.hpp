#pragma once

// Toy segmentation trainer: one RIAttnConv layer on the centroid descriptor,
// a per-point linear head with softmax cross-entropy, and a Bingham
// distribution over the shadow rotation that is trained jointly through the
// composite loss. R_g is refreshed from that distribution once per epoch.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "sipf/bingham.hpp"
#include "sipf/descriptors.hpp"
#include "sipf/error.hpp"
#include "sipf/geometry.hpp"
#include "sipf/knn.hpp"
#include "sipf/lrf.hpp"
#include "sipf/riattn.hpp"
#include "sipf/wingtip.hpp"

namespace sipf {

enum class BinghamLossKind { entropy, nll_mode };

/// Where each epoch's shadow rotation comes from: a draw from the Bingham
/// distribution, or its mode.
enum class ShadowSource { sample, mode };

/// Constant rate, or cosine decay from the base rate toward 0 over the run.
enum class LrSchedule { constant, cosine };

struct ToyTaskConfig {
  std::size_t epochs = 200;
  double learning_rate = 0.1;
  std::size_t batch_size = 1;
  std::size_t k = 20;
  double delta = kDefaultDelta;
  DescriptorMask mask = DescriptorMask::sipf;
  std::uint64_t seed = 0;
  int quadrature_order = kDefaultQuadratureOrder;
  BinghamLossKind bingham_loss_kind = BinghamLossKind::entropy;
  std::size_t c_out = 16;
  std::size_t hidden = 16;  ///< kernel MLP width; 0 means c_in
  bool update_bingham = true;
  ShadowSource shadow_source = ShadowSource::mode;
  LrSchedule lr_schedule = LrSchedule::constant;

  /// Rate used for every step of `epoch` (1-based).
  double rate_at(std::size_t epoch) const {
    if (lr_schedule == LrSchedule::constant) return learning_rate;
    const double t = static_cast<double>(epoch - 1) / static_cast<double>(epochs);
    return 0.5 * learning_rate * (1.0 + std::cos(std::numbers::pi * t));
  }

  void validate() const {
    if (!(delta >= 0.0)) throw Error(ErrorKind::invalid_argument, "delta must be >= 0");
    if (k < 1) throw Error(ErrorKind::invalid_argument, "k must be >= 1");
    if (epochs < 1) throw Error(ErrorKind::invalid_argument, "epochs must be >= 1");
    if (batch_size < 1) throw Error(ErrorKind::invalid_argument, "batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw Error(ErrorKind::invalid_argument, "learning_rate must be > 0");
    if (quadrature_order < kMinQuadratureOrder)
      throw Error(ErrorKind::invalid_argument, "quadrature_order below minimum");
  }
};

/// Per-point linear map to two logits.
struct LinearHead {
  MatrixXd w;  // 2 × c
  VectorXd b;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double task_loss = 0.0;
  double bingham_loss = 0.0;
  double total_loss = 0.0;
  double accuracy = 0.0;
  UnitQuaternion rg;
};

struct ToyModel {
  RIAttnLayer layer;
  LinearHead head;
  BinghamSeed bingham;
};

struct TrainResult {
  ToyModel model;
  std::vector<EpochMetrics> log;
};

/// Geometry that stays fixed for a cloud across epochs.
struct PreparedCloud {
  const LabeledCloud* source = nullptr;
  NeighborGraph graph{1, {}};
  std::vector<LocalFrame> frames;
  MatrixXd features;  // N×3 centroid descriptor
};

inline PreparedCloud prepare_cloud(const LabeledCloud& lc, std::size_t k) {
  PreparedCloud p;
  p.source = &lc;
  p.graph = knn_graph(lc.cloud, k);
  p.frames = build_all_lrfs(lc.cloud, p.graph,
                            lc.cloud.has_normals() ? FrameMode::normal_based
                                                   : FrameMode::barycenter_based);
  const auto desc = input_descriptor(lc.cloud, p.frames);
  p.features.resize(static_cast<Eigen::Index>(desc.size()), 3);
  for (std::size_t i = 0; i < desc.size(); ++i)
    p.features.row(static_cast<Eigen::Index>(i)) << desc[i].radius, desc[i].sin, desc[i].cos;
  return p;
}

struct HeadOutput {
  double loss = 0.0;       // summed cross-entropy
  std::size_t correct = 0;
  MatrixXd d_logits;       // N×2, gradient of the summed loss
};

/// Softmax cross-entropy of the head applied to every row of `x`.
inline HeadOutput head_forward(const LinearHead& head, const MatrixXd& x,
                               const std::vector<int>& labels) {
  HeadOutput o;
  const MatrixXd logits = (x * head.w.transpose()).rowwise() + head.b.transpose();
  o.d_logits.resize(logits.rows(), 2);
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    const double e0 = std::exp(logits(i, 0) - m), e1 = std::exp(logits(i, 1) - m);
    const double z = e0 + e1;
    const int y = labels[static_cast<std::size_t>(i)];
    o.loss += -(logits(i, y) - m - std::log(z));
    o.d_logits(i, 0) = e0 / z - (y == 0 ? 1.0 : 0.0);
    o.d_logits(i, 1) = e1 / z - (y == 1 ? 1.0 : 0.0);
    const int pred = logits(i, 1) > logits(i, 0) ? 1 : 0;
    if (pred == y) ++o.correct;
  }
  return o;
}

struct BinghamLoss {
  double value = 0.0;
  Vec4 d_z1 = Vec4::Zero();
  Vec3 d_z2 = Vec3::Zero();
};

/// L_bingham and its seed gradient. `entropy` depends on Λ only, so d_z1 is 0.
inline BinghamLoss bingham_loss(const BinghamSeed& seed, const UnitQuaternion& q_g,
                                BinghamLossKind kind, int order) {
  const BinghamParams params = BinghamParams::from_seed(seed);
  const NormalizationResult n = normalization(params, order);
  BinghamLoss out;
  if (kind == BinghamLossKind::entropy) {
    out.value = entropy(params.lambda(), n);
    out.d_z2 = lambda_jacobian(seed.z2).transpose() * entropy_gradient_lambda(params.lambda(), n);
  } else {
    out.value = nll(q_g, params, n);
    nll_gradient_seed(q_g, seed, n, out.d_z1, out.d_z2);
  }
  return out;
}

/// Draws a shadow rotation, nudging z1 until the draw is not the identity.
inline UnitQuaternion draw_shadow_quaternion(BinghamSeed& seed, Rng& rng, ShadowSource source) {
  for (int attempt = 0; attempt < 100; ++attempt) {
    const BinghamParams params = BinghamParams::from_seed(seed);
    const UnitQuaternion q =
        source == ShadowSource::mode ? mode(params) : sample(params, rng, 1).front();
    if (!is_identity_rotation(q)) return q;
    for (int i = 0; i < 4; ++i) seed.z1[i] += 1e-3 * standard_normal(rng);
  }
  throw Error(ErrorKind::numeric, "shadow rotation stuck at identity");
}

/// Epoch-wise shadow locating. R_g comes from the current Bingham (its mode or
/// a draw, per `shadow_source`), is held fixed for every batch of an epoch,
/// and is refreshed at epoch end.
/// Every batch takes one SGD step on the layer, the head and the Bingham seed.
inline TrainResult train_toy(const std::vector<LabeledCloud>& dataset, const ToyTaskConfig& cfg) {
  cfg.validate();
  if (dataset.empty()) throw Error(ErrorKind::invalid_argument, "dataset is empty");
  Rng rng(cfg.seed);

  std::vector<PreparedCloud> prepared;
  prepared.reserve(dataset.size());
  for (const auto& lc : dataset) prepared.push_back(prepare_cloud(lc, cfg.k));

  TrainResult result;
  ToyModel& model = result.model;
  model.layer = RIAttnLayer::random(3, cfg.c_out, rng, cfg.hidden);
  model.head.w.resize(2, static_cast<Eigen::Index>(cfg.c_out));
  for (Eigen::Index i = 0; i < model.head.w.size(); ++i)
    model.head.w.data()[i] = standard_normal(rng) / std::sqrt(static_cast<double>(cfg.c_out));
  model.head.b = VectorXd::Zero(2);
  model.bingham = BinghamSeed::random(rng);

  UnitQuaternion q_g = draw_shadow_quaternion(model.bingham, rng, cfg.shadow_source);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const Rotation3 rg = quat_to_matrix(q_g);
    std::vector<std::vector<SipfStack>> stacks;
    stacks.reserve(prepared.size());
    for (const auto& p : prepared)
      stacks.push_back(sipf_stacks(p.source->cloud, p.frames, p.graph,
                                   shadow_of(p.source->cloud, p.frames, rg), cfg.mask));

    EpochMetrics m;
    m.epoch = epoch;
    m.rg = q_g;
    std::size_t points = 0, correct = 0, batches = 0;
    for (std::size_t start = 0; start < prepared.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(prepared.size(), start + cfg.batch_size);
      std::size_t batch_points = 0;
      for (std::size_t c = start; c < stop; ++c) batch_points += prepared[c].source->cloud.size();
      const double inv = 1.0 / static_cast<double>(batch_points);

      std::vector<LayerForward> fwd;
      std::vector<HeadOutput> heads;
      double task = 0.0;
      for (std::size_t c = start; c < stop; ++c) {
        fwd.push_back(riattnconv_forward(stacks[c], prepared[c].graph, prepared[c].features,
                                         model.layer));
        heads.push_back(head_forward(model.head, fwd.back().out, prepared[c].source->labels));
        task += heads.back().loss;
        correct += heads.back().correct;
      }
      task *= inv;
      points += batch_points;

      const BinghamLoss bl = bingham_loss(model.bingham, q_g, cfg.bingham_loss_kind,
                                          cfg.quadrature_order);
      const double total = total_loss(task, bl.value, cfg.delta);
      if (!std::isfinite(total))
        throw Error(ErrorKind::numeric, "non-finite loss at epoch " + std::to_string(epoch) +
                                            ", batch " + std::to_string(batches));
      const TotalLossGrad tg = total_loss_grad(task, bl.value, cfg.delta);

      RIAttnLayer d_layer = RIAttnLayer::zeros(model.layer.c_in, model.layer.c_out,
                                               model.layer.hidden);
      MatrixXd d_hw = MatrixXd::Zero(2, model.head.w.cols());
      VectorXd d_hb = VectorXd::Zero(2);
      for (std::size_t b = 0; b < fwd.size(); ++b) {
        const MatrixXd d_logits = heads[b].d_logits * (tg.d_task * inv);
        d_hw.noalias() += d_logits.transpose() * fwd[b].out;
        d_hb += d_logits.colwise().sum().transpose();
        const MatrixXd d_out = d_logits * model.head.w;
        const LayerGrad lg = backward(model.layer, fwd[b], d_out);
        d_layer.w1 += lg.params.w1;
        d_layer.b1 += lg.params.b1;
        d_layer.w2 += lg.params.w2;
        d_layer.b2 += lg.params.b2;
        d_layer.g += lg.params.g;
        d_layer.gb += lg.params.gb;
      }

      const double lr = cfg.rate_at(epoch);
      model.layer.w1 -= lr * d_layer.w1;
      model.layer.b1 -= lr * d_layer.b1;
      model.layer.w2 -= lr * d_layer.w2;
      model.layer.b2 -= lr * d_layer.b2;
      model.layer.g -= lr * d_layer.g;
      model.layer.gb -= lr * d_layer.gb;
      model.head.w -= lr * d_hw;
      model.head.b -= lr * d_hb;
      if (cfg.update_bingham) {
        model.bingham.z1 -= lr * tg.d_bingham * bl.d_z1;
        model.bingham.z2 -= lr * tg.d_bingham * bl.d_z2;
      }

      m.task_loss += task;
      m.bingham_loss += bl.value;
      m.total_loss += total;
      ++batches;
    }
    m.task_loss /= static_cast<double>(batches);
    m.bingham_loss /= static_cast<double>(batches);
    m.total_loss /= static_cast<double>(batches);
    m.accuracy = static_cast<double>(correct) / static_cast<double>(points);
    result.log.push_back(m);

    q_g = draw_shadow_quaternion(model.bingham, rng, cfg.shadow_source);
  }
  return result;
}

}  // namespace sipf
