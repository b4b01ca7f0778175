#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "sipf/geometry.hpp"

using namespace sipf;

namespace {

std::vector<Vec3> random_points(Rng& rng, std::size_t n) {
  std::vector<Vec3> pts(n);
  for (auto& p : pts) p = Vec3(standard_normal(rng), standard_normal(rng), standard_normal(rng));
  return pts;
}

}  // namespace

TEST(PointCloud, RejectsTooFewPoints) {
  EXPECT_THROW(PointCloud({Vec3(0, 0, 0)}), Error);
}

TEST(PointCloud, RejectsNonFinite) {
  try {
    PointCloud({Vec3(0, 0, 0), Vec3(NAN, 0, 0)});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::invalid_input);
    EXPECT_EQ(e.index(), 1u);
  }
}

TEST(PointCloud, RejectsNonUnitNormals) {
  std::vector<Vec3> pts{Vec3(0, 0, 0), Vec3(1, 0, 0)};
  EXPECT_THROW(PointCloud(pts, std::vector<Vec3>{Vec3(0, 0, 1), Vec3(0, 0, 1.001)}), Error);
  EXPECT_NO_THROW(PointCloud(pts, std::vector<Vec3>{Vec3(0, 0, 1), Vec3(0, 1, 0)}));
}

TEST(Quaternion, IdentityMapsToIdentity) {
  const Mat3 m = quat_to_matrix(UnitQuaternion(1, 0, 0, 0)).matrix();
  EXPECT_TRUE(m.isApprox(Mat3::Identity(), 0.0));
}

TEST(Quaternion, QuarterTurnAboutX) {
  const double h = std::sqrt(0.5);
  const Mat3 m = quat_to_matrix(UnitQuaternion(h, h, 0, 0)).matrix();
  // Column-vector action of the standard matrix.
  EXPECT_LT((m * Vec3(0, 1, 0) - Vec3(0, 0, 1)).norm(), 1e-15);
}

TEST(Quaternion, AntipodesGiveSameMatrix) {
  Rng rng(5);
  for (int t = 0; t < 100; ++t) {
    const UnitQuaternion q = random_quaternion(rng);
    const UnitQuaternion neg(-q.vec());
    EXPECT_EQ(quat_to_matrix(q).matrix(), quat_to_matrix(neg).matrix());
  }
}

TEST(Quaternion, RejectsNonUnit) {
  EXPECT_THROW(quat_to_matrix(UnitQuaternion(1.0 + 1e-5, 0, 0, 0)), Error);
  EXPECT_NO_THROW(quat_to_matrix(UnitQuaternion(1.0 + 1e-7, 0, 0, 0)));
}

TEST(Quaternion, MatrixToQuatExamples) {
  const UnitQuaternion q = matrix_to_quat(Mat3::Identity());
  EXPECT_EQ(q.vec(), Vec4(1, 0, 0, 0));
  Mat3 rz = Mat3::Zero();
  rz(0, 0) = -1;
  rz(1, 1) = -1;
  rz(2, 2) = 1;
  const UnitQuaternion p = matrix_to_quat(rz);
  EXPECT_LT((p.vec() - Vec4(0, 0, 0, 1)).norm(), 1e-15);
}

TEST(Quaternion, MatrixToQuatRejectsNonOrthogonal) {
  Mat3 m = Mat3::Identity();
  m(0, 1) = 1e-3;
  EXPECT_THROW(matrix_to_quat(m), Error);
}

TEST(Quaternion, RoundTrips) {
  Rng rng(11);
  for (int t = 0; t < 1000; ++t) {
    const UnitQuaternion q = random_quaternion(rng);
    const UnitQuaternion back = matrix_to_quat(quat_to_matrix(q));
    const double err = std::min((back.vec() - q.vec()).norm(), (back.vec() + q.vec()).norm());
    EXPECT_LT(err, 1e-10);
    EXPECT_GE(back.w, 0.0);

    const Rotation3 r = random_rotation(rng);
    const Mat3 again = quat_to_matrix(matrix_to_quat(r)).matrix();
    EXPECT_LT((again - r.matrix()).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Rotation, ValidatesInput) {
  Mat3 m = Mat3::Identity();
  m(2, 2) = -1;  // reflection
  EXPECT_THROW(Rotation3{m}, Error);
  EXPECT_THROW(Rotation3{Mat3::Identity() * 1.001}, Error);
}

TEST(ApplyRotation, IdentityLeavesCloudUnchanged) {
  Rng rng(2);
  const PointCloud c(random_points(rng, 20));
  const PointCloud r = apply_rotation(c, Rotation3::identity());
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_EQ(r.point(i), c.point(i));
}

TEST(ApplyRotation, RowVectorConvention) {
  // p R with R the standard quarter turn about z sends (1,0,0) to (0,-1,0).
  const Rotation3 rz = Rotation3::axis_angle(Vec3::UnitZ(), std::numbers::pi / 2);
  const PointCloud c({Vec3(1, 0, 0), Vec3(0, 0, 1)});
  const Vec3 p = apply_rotation(c, rz).point(0);
  EXPECT_LT((p - Vec3(0, -1, 0)).norm(), 1e-15);
  // Composition: p (A B) = (p A) B.
  Rng rng(8);
  const Rotation3 a = random_rotation(rng), b = random_rotation(rng);
  const Vec3 q(0.3, -1.2, 2.0);
  EXPECT_LT((rotate(q, a * b) - rotate(rotate(q, a), b)).norm(), 1e-14);
}

TEST(ApplyRotation, PreservesDistances) {
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    std::vector<Vec3> pts = random_points(rng, 40);
    std::vector<Vec3> nrm;
    for (const auto& p : random_points(rng, 40)) nrm.push_back(p.normalized());
    const PointCloud c(pts, nrm);
    const PointCloud r = apply_rotation(c, random_rotation(rng));
    for (std::size_t i = 0; i < c.size(); ++i) {
      EXPECT_NEAR(r.normals()[i].norm(), 1.0, 1e-12);
      for (std::size_t j = 0; j < c.size(); ++j) {
        const double d0 = (c.point(i) - c.point(j)).norm();
        const double d1 = (r.point(i) - r.point(j)).norm();
        EXPECT_LE(std::abs(d1 - d0), 1e-12 * std::max(1.0, d0));
      }
    }
  }
}

TEST(RandomRotation, DeterministicPerSeed) {
  Rng a(99), b(99);
  for (int t = 0; t < 10; ++t) EXPECT_EQ(random_rotation(a).matrix(), random_rotation(b).matrix());
}

TEST(RandomRotation, MeanEntryNearZero) {
  Rng rng(4);
  double sum = 0.0;
  for (int t = 0; t < 10000; ++t) sum += random_rotation(rng)(0, 0);
  EXPECT_LT(std::abs(sum / 10000.0), 0.05);
}

TEST(RandomRotation, QuaternionScatterIsIsotropic) {
  Rng rng(6);
  Mat4 s = Mat4::Zero();
  const int n = 100000;
  for (int t = 0; t < n; ++t) {
    const Vec4 q = random_quaternion(rng).vec();
    s += q * q.transpose();
  }
  s /= n;
  EXPECT_LT((s - Mat4::Identity() / 4.0).cwiseAbs().maxCoeff(), 0.01);
}

TEST(Geodesic, MatchesQuaternionAngle) {
  Rng rng(12);
  for (int t = 0; t < 200; ++t) {
    const UnitQuaternion a = random_quaternion(rng), b = random_quaternion(rng);
    const double oracle = 2.0 * std::acos(std::min(1.0, std::abs(a.vec().dot(b.vec()))));
    EXPECT_NEAR(geodesic_distance(quat_to_matrix(a), quat_to_matrix(b)), oracle, 1e-7);
  }
  EXPECT_NEAR(geodesic_distance(Rotation3::identity(),
                                Rotation3::axis_angle(Vec3(1, 2, 3), 1e-9)),
              1e-9, 1e-20);
}
