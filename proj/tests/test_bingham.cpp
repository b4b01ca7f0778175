#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Eigenvalues>

#include "sipf/bingham.hpp"

using namespace sipf;

namespace {

constexpr double kPi = std::numbers::pi;
const double kLogSphere = std::log(2.0 * kPi * kPi);

Vec4 gaussian4(Rng& rng) {
  return {standard_normal(rng), standard_normal(rng), standard_normal(rng), standard_normal(rng)};
}

// The printed sign pattern, written out element by element.
Mat4 printed_v(const Vec4& z) {
  Mat4 v;
  v(0, 0) = z[0];  v(0, 1) = -z[1]; v(0, 2) = -z[2]; v(0, 3) = z[3];
  v(1, 0) = z[1];  v(1, 1) = z[0];  v(1, 2) = z[3];  v(1, 3) = z[2];
  v(2, 0) = z[2];  v(2, 1) = -z[3]; v(2, 2) = z[0];  v(2, 3) = -z[1];
  v(3, 0) = z[3];  v(3, 1) = z[2];  v(3, 2) = -z[1]; v(3, 3) = -z[0];
  return v;
}

BinghamParams params_with(const Vec3& lambda, Rng& rng) {
  return BinghamParams(birdal_V(gaussian4(rng)), lambda);
}

// -E[log f] over sampler draws, f the normalized density.
double monte_carlo_entropy(const BinghamParams& p, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  const double log_f = std::log(normalization(p).F);
  double sum = 0.0;
  for (const auto& q : sample(p, rng, n)) sum += log_unnormalized_density(q, p) - log_f;
  return -sum / static_cast<double>(n);
}

}  // namespace

TEST(BirdalV, IdentitySeed) {
  Mat4 expected = Mat4::Identity();
  expected(3, 3) = -1.0;
  EXPECT_EQ(birdal_V(Vec4(1, 0, 0, 0)), expected);
}

TEST(BirdalV, OrthogonalAndTranscribed) {
  Rng rng(1);
  for (int t = 0; t < 100; ++t) {
    const Vec4 z = gaussian4(rng) * (0.1 + 5.0 * uniform01(rng));
    const Mat4 v = birdal_V(z);
    EXPECT_LT((v.transpose() * v - Mat4::Identity()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((v - printed_v(z.normalized())).cwiseAbs().maxCoeff(), 1e-15);
  }
  EXPECT_EQ(birdal_V(Vec4(1, 1, 1, 1)), printed_v(Vec4(0.5, 0.5, 0.5, 0.5)));
}

TEST(BirdalV, ZeroSeedRejected) {
  try {
    birdal_V(Vec4::Zero());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::invalid_argument);
  }
}

TEST(Lambda, Examples) {
  const double l2 = std::log(2.0);
  const Vec3 l = lambda_from(Vec3::Zero());
  EXPECT_NEAR(l[0], -3 * l2, 1e-15);
  EXPECT_NEAR(l[1], -2 * l2, 1e-15);
  EXPECT_NEAR(l[2], -l2, 1e-15);
  EXPECT_NEAR(lambda_from(Vec3(40, 30, 35))[2], -40.0, 1e-12);
}

TEST(Lambda, OrderingAndJacobian) {
  Rng rng(2);
  for (int t = 0; t < 500; ++t) {
    const Vec3 z(5 * standard_normal(rng), 5 * standard_normal(rng), 5 * standard_normal(rng));
    const Vec3 l = lambda_from(z);
    EXPECT_TRUE(l[0] <= l[1] && l[1] <= l[2] && l[2] < 0.0);
    EXPECT_NO_THROW(BinghamParams(Mat4::Identity(), l));
    const Mat3 j = lambda_jacobian(z);
    for (int k = 0; k < 3; ++k) {
      Vec3 zp = z, zm = z;
      zp[k] += 1e-6;
      zm[k] -= 1e-6;
      const Vec3 fd = (lambda_from(zp) - lambda_from(zm)) / 2e-6;
      EXPECT_LT((fd - j.col(k)).cwiseAbs().maxCoeff(), 1e-8);
    }
  }
}

TEST(Params, Validation) {
  EXPECT_THROW(BinghamParams(Mat4::Identity(), Vec3(-1, -2, -3)), Error);
  EXPECT_THROW(BinghamParams(Mat4::Identity(), Vec3(-3, -2, 0)), Error);
  Mat4 bad = Mat4::Identity();
  bad(0, 1) = 0.1;
  EXPECT_THROW(BinghamParams(bad, Vec3(-3, -2, -1)), Error);
}

TEST(Density, Examples) {
  Rng rng(3);
  const BinghamParams p = params_with(Vec3(-7, -4, -1.5), rng);
  EXPECT_NEAR(log_unnormalized_density(mode(p), p), 0.0, 1e-14);
  EXPECT_NEAR(log_unnormalized_density(UnitQuaternion(Vec4(p.V().col(0))), p), -7.0, 1e-13);
  for (int t = 0; t < 100; ++t) {
    const UnitQuaternion q = random_quaternion(rng);
    EXPECT_EQ(log_unnormalized_density(q, p), log_unnormalized_density(UnitQuaternion(-q.vec()), p));
    EXPECT_LE(log_unnormalized_density(q, p), 0.0);
    EXPECT_NEAR(log_unnormalized_density(q, p), q.vec().dot(p.concentration() * q.vec()), 1e-12);
  }
}

TEST(Normalization, UniformLimit) {
  const NormalizationResult n = normalization(Vec3(-1e-6, -1e-6, -1e-6));
  EXPECT_NEAR(n.F / (2 * kPi * kPi), 1.0, 1e-3);
  // Each y_i² averages 1/4 on S³.
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(n.gradF[i] / n.F, 0.25, 1e-3);
}

TEST(Normalization, RejectsLowOrder) {
  EXPECT_THROW(normalization(Vec3(-3, -2, -1), kMinQuadratureOrder - 1), Error);
}

TEST(Normalization, GradientMatchesFiniteDifferences) {
  for (const Vec3& l : {Vec3(-0.5, -0.3, -0.1), Vec3(-10, -5, -2), Vec3(-60, -30, -15)}) {
    const NormalizationResult n = normalization(l);
    for (int i = 0; i < 3; ++i) {
      EXPECT_GT(n.gradF[i], 0.0);
      Vec3 lp = l, lm = l;
      const double h = 1e-4 * std::max(1.0, std::abs(l[i]));
      lp[i] += h;
      lm[i] -= h;
      const double fd = (normalization(lp).F - normalization(lm).F) / (2 * h);
      EXPECT_NEAR(fd / n.gradF[i], 1.0, 1e-4);
      const Vec3 fd_h = (normalization(lp).gradF - normalization(lm).gradF) / (2 * h);
      EXPECT_LT((fd_h - n.hessF.col(i)).cwiseAbs().maxCoeff() / n.hessF.cwiseAbs().maxCoeff(), 1e-4);
    }
  }
}

// Full-sphere product rule in hyperspherical angles with V applied in the
// ambient space: an integration route independent of the library's grid.
TEST(Normalization, IndependentOfV) {
  Rng rng(4);
  const Vec3 l(-10, -5, -2);
  const double lib = normalization(l).F;
  std::vector<double> x, w;
  gauss_legendre(80, x, w);
  for (int t = 0; t < 2; ++t) {
    const BinghamParams p = params_with(l, rng);
    const Mat4 c = p.concentration();
    double f = 0.0;
    for (std::size_t a = 0; a < x.size(); ++a) {
      const double psi = kPi / 2 * (x[a] + 1), wa = kPi / 2 * w[a];
      for (std::size_t b = 0; b < x.size(); ++b) {
        const double th = kPi / 2 * (x[b] + 1), wb = kPi / 2 * w[b];
        for (std::size_t k = 0; k < x.size(); ++k) {
          const double ph = kPi * (x[k] + 1), wk = kPi * w[k];
          const Vec4 q(std::cos(psi), std::sin(psi) * std::cos(th),
                       std::sin(psi) * std::sin(th) * std::cos(ph),
                       std::sin(psi) * std::sin(th) * std::sin(ph));
          f += wa * wb * wk * std::sin(psi) * std::sin(psi) * std::sin(th) * std::exp(q.dot(c * q));
        }
      }
    }
    EXPECT_NEAR(f / lib, 1.0, 1e-9);
    EXPECT_EQ(normalization(p).F, lib);
  }
}

TEST(Entropy, UniformLimitAndConcentrated) {
  Rng rng(5);
  EXPECT_NEAR(entropy(params_with(Vec3(-1e-6, -1e-6, -1e-6), rng)), kLogSphere, 1e-3);
  const BinghamParams conc = params_with(Vec3(-100, -100, -100), rng);
  const double h = entropy(conc);
  EXPECT_LT(h, 0.0);
  EXPECT_NEAR(h, monte_carlo_entropy(conc, 20000, 6), 0.05);
}

TEST(Entropy, MatchesMonteCarloInThreeRegimes) {
  Rng rng(7);
  for (const Vec3& l : {Vec3(-0.8, -0.5, -0.2), Vec3(-10, -5, -2), Vec3(-150, -90, -60)}) {
    const BinghamParams p = params_with(l, rng);
    EXPECT_NEAR(entropy(p), monte_carlo_entropy(p, 100000, 8), 0.02) << l.transpose();
  }
}

TEST(Entropy, GradientMatchesFiniteDifferences) {
  for (const Vec3& l : {Vec3(-0.8, -0.5, -0.2), Vec3(-10, -5, -2), Vec3(-40, -20, -12)}) {
    const Vec3 g = entropy_gradient_lambda(l, normalization(l));
    for (int i = 0; i < 3; ++i) {
      Vec3 lp = l, lm = l;
      lp[i] += 1e-5;
      lm[i] -= 1e-5;
      const double fd = (entropy(lp, normalization(lp)) - entropy(lm, normalization(lm))) / 2e-5;
      EXPECT_NEAR(g[i], fd, 1e-4 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST(Mode, IdentitySeedGivesLastColumn) {
  const BinghamParams p = BinghamParams::from_seed({Vec4(1, 0, 0, 0), Vec3::Zero()});
  EXPECT_EQ(mode(p).vec(), Vec4(0, 0, 0, 1));
  EXPECT_FALSE(is_identity_rotation(mode(p)));
  EXPECT_TRUE(is_identity_rotation(UnitQuaternion(1, 0, 0, 0)));
}

TEST(Mode, TranscribedFromSeedAndOptimal) {
  Rng rng(9);
  for (int t = 0; t < 50; ++t) {
    const Vec4 z = gaussian4(rng);
    const BinghamParams p = BinghamParams::from_seed({z, Vec3(standard_normal(rng), 0.3, -0.2)});
    const Vec4 u = z.normalized();
    Vec4 col(u[3], u[2], -u[1], -u[0]);
    if (col[0] < 0) col = -col;
    EXPECT_LT((mode(p).vec() - col).norm(), 1e-15);
    const double at_mode = log_unnormalized_density(mode(p), p);
    for (int s = 0; s < 1000; ++s)
      EXPECT_GE(at_mode, log_unnormalized_density(random_quaternion(rng), p));
  }
}

TEST(Nll, ValueAndSeedGradient) {
  Rng rng(10);
  for (int t = 0; t < 10; ++t) {
    const BinghamSeed seed{gaussian4(rng), Vec3(standard_normal(rng), standard_normal(rng),
                                                standard_normal(rng))};
    const UnitQuaternion q = random_quaternion(rng);
    auto value = [&](const BinghamSeed& s) {
      const BinghamParams p = BinghamParams::from_seed(s);
      return nll(q, p, normalization(p));
    };
    const BinghamParams p = BinghamParams::from_seed(seed);
    const NormalizationResult n = normalization(p);
    EXPECT_NEAR(value(seed), std::log(n.F) - log_unnormalized_density(q, p), 1e-14);
    Vec4 d1;
    Vec3 d2;
    nll_gradient_seed(q, seed, n, d1, d2);
    for (int i = 0; i < 4; ++i) {
      BinghamSeed a = seed, b = seed;
      a.z1[i] += 1e-5;
      b.z1[i] -= 1e-5;
      const double fd = (value(a) - value(b)) / 2e-5;
      EXPECT_NEAR(d1[i], fd, 1e-4 * std::max(1.0, std::abs(fd)) + 1e-7);
    }
    for (int i = 0; i < 3; ++i) {
      BinghamSeed a = seed, b = seed;
      a.z2[i] += 1e-5;
      b.z2[i] -= 1e-5;
      const double fd = (value(a) - value(b)) / 2e-5;
      EXPECT_NEAR(d2[i], fd, 1e-4 * std::max(1.0, std::abs(fd)) + 1e-7);
    }
  }
}

TEST(Sampler, DeterministicPerSeed) {
  Rng r(11);
  const BinghamParams p = params_with(Vec3(-10, -5, -2), r);
  Rng a(3), b(3);
  const auto qa = sample(p, a, 500), qb = sample(p, b, 500);
  for (std::size_t i = 0; i < qa.size(); ++i) EXPECT_EQ(qa[i].vec(), qb[i].vec());
}

TEST(Sampler, NearUniform) {
  Rng r(12);
  const BinghamParams p = params_with(Vec3(-1e-4, -1e-4, -1e-4), r);
  SampleStats st;
  const auto qs = sample(p, r, 100000, {}, &st);
  EXPECT_GT(st.acceptance_rate(), 0.9);
  Mat4 s = Mat4::Zero();
  for (const auto& q : qs) s += q.vec() * q.vec().transpose();
  s /= static_cast<double>(qs.size());
  EXPECT_LT((s - Mat4::Identity() / 4).cwiseAbs().maxCoeff(), 0.01);
}

TEST(Sampler, ConcentratedAroundMode) {
  Rng r(13);
  const BinghamParams p = params_with(Vec3(-200, -200, -200), r);
  const auto qs = sample(p, r, 10000);
  const UnitQuaternion m = mode(p);
  std::size_t inside = 0;
  for (const auto& q : qs) inside += sphere_distance(q, m) < 0.2;
  EXPECT_GE(static_cast<double>(inside) / qs.size(), 0.99);
}

TEST(Sampler, ScatterEigenvectorsMatchV) {
  Rng r(14);
  const BinghamParams p = params_with(Vec3(-10, -5, -2), r);
  const auto qs = sample(p, r, 100000);
  Mat4 s = Mat4::Zero();
  for (const auto& q : qs) s += q.vec() * q.vec().transpose();
  s /= static_cast<double>(qs.size());
  Eigen::SelfAdjointEigenSolver<Mat4> eig(s);  // ascending eigenvalues pair with λ1..λ3, 0
  for (int i = 0; i < 4; ++i) {
    const double c = std::abs(eig.eigenvectors().col(i).dot(p.V().col(i)));
    EXPECT_LT(std::acos(std::min(1.0, c)), 2.0 * kPi / 180.0) << "column " << i;
  }
}

// Chi-square of the sampled quadratic form qᵀCq against bin probabilities from
// importance-weighted uniform draws.
TEST(Sampler, QuadraticFormGoodnessOfFit) {
  Rng r(15);
  const BinghamParams p = params_with(Vec3(-10, -5, -2), r);
  const Mat4 c = p.concentration();
  std::vector<std::pair<double, double>> ref;  // (value, weight)
  double total = 0.0;
  for (int i = 0; i < 2000000; ++i) {
    const Vec4 q = random_quaternion(r).vec();
    const double v = q.dot(c * q);
    ref.emplace_back(v, std::exp(v));
    total += std::exp(v);
  }
  std::sort(ref.begin(), ref.end());
  const int bins = 10;
  std::vector<double> edges, prob(bins, 0.0);
  double acc = 0.0;
  for (const auto& [v, w] : ref) {
    acc += w / total;
    if (edges.size() < bins - 1 && acc >= (edges.size() + 1.0) / bins) edges.push_back(v);
  }
  auto bin_of = [&](double v) {
    return static_cast<int>(std::upper_bound(edges.begin(), edges.end(), v) - edges.begin());
  };
  for (const auto& [v, w] : ref) prob[static_cast<std::size_t>(bin_of(v))] += w / total;

  const std::size_t n = 20000;
  Rng s(16);
  std::vector<double> count(bins, 0.0);
  for (const auto& q : sample(p, s, n)) count[static_cast<std::size_t>(bin_of(q.vec().dot(c * q.vec())))] += 1;
  double chi2 = 0.0;
  for (int b = 0; b < bins; ++b) {
    const double e = prob[static_cast<std::size_t>(b)] * n;
    chi2 += (count[static_cast<std::size_t>(b)] - e) * (count[static_cast<std::size_t>(b)] - e) / e;
  }
  EXPECT_LT(chi2, 21.666);  // 99th percentile, 9 degrees of freedom
}

TEST(Sampler, StallIsReported) {
  Rng r(17);
  const BinghamParams p = params_with(Vec3(-10, -5, -2), r);
  SamplerOptions opt;
  opt.safety = 1e9;
  opt.min_proposals_before_stall = 1000;
  try {
    sample(p, r, 10, opt);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::sampler_stall);
  }
  EXPECT_THROW(sample(p, r, 0), Error);
}

TEST(Sampler, EnvelopeBoundsTheRatio) {
  // f*/g* as a function of z = qᵀAq never exceeds the bound on [0, a_max].
  for (double a_max : {0.1, 1.0, 1.5, 3.0, 50.0, 400.0}) {
    const double m = acg_envelope_bound(a_max, 1.0);
    for (int i = 0; i <= 1000; ++i) {
      const double z = a_max * i / 1000.0;
      EXPECT_LE(std::exp(-z) * (1 + 2 * z) * (1 + 2 * z), m * (1 + 1e-12));
    }
  }
}
