#include "oracles.hpp"

#include "smsckf/geometry.hpp"

#include <gtest/gtest.h>

#include <numbers>

namespace {

using namespace smsckf;

TEST(Geometry, IdentityQuaternion) {
  EXPECT_EQ(quat_to_rotation(Quaternion::identity()), Mat3::Identity());
  EXPECT_EQ(small_angle_quat(Vec3::Zero()).coeffs(), Quaternion::identity().coeffs());
  EXPECT_TRUE(omega_matrix(Vec3::Zero()).isZero());
  EXPECT_TRUE(skew(Vec3::Zero()).isZero());
}

TEST(Geometry, TinyAngleUsesFirstOrderForm) {
  const Quaternion q = small_angle_quat(Vec3(1e-8, 0.0, 0.0));
  EXPECT_NEAR(q.x(), 5e-9, 1e-24);
  EXPECT_NEAR(q.w(), 1.0, 1e-16);
}

TEST(Geometry, QuarterTurnsCompose) {
  const Quaternion q90 = small_angle_quat(Vec3(0.0, 0.0, std::numbers::pi / 2));
  const Mat3 C = quat_to_rotation(q90 * q90);
  EXPECT_LT((C - oracle::axis_angle_matrix(Vec3::UnitZ(), std::numbers::pi)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Geometry, QuarterTurnAboutZ) {
  const double h = std::sqrt(0.5);
  const Quaternion q(0.0, 0.0, h, h);
  Mat3 expected;
  expected << 0, 1, 0, -1, 0, 0, 0, 0, 1;
  EXPECT_LT((quat_to_rotation(q) - expected).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Geometry, MatchesAxisAngleOracle) {
  oracle::Random rnd(11);
  for (int i = 0; i < 200; ++i) {
    const Vec3 axis = rnd.vec(1.0).normalized();
    const double angle = rnd.uniform(-3.0, 3.0);
    const Mat3 C = quat_to_rotation(small_angle_quat(axis * angle));
    EXPECT_LT((C - oracle::axis_angle_matrix(axis, angle)).cwiseAbs().maxCoeff(), 1e-13);
  }
}

TEST(Geometry, RotationRoundTrip) {
  oracle::Random rnd(3);
  for (int i = 0; i < 1000; ++i) {
    const Quaternion q = rnd.quat();
    const Quaternion back = rotation_to_quat(quat_to_rotation(q));
    EXPECT_LT((back.coeffs() - q.coeffs()).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Geometry, ProductIsHomomorphism) {
  oracle::Random rnd(5);
  for (int i = 0; i < 500; ++i) {
    const Quaternion p = rnd.quat();
    const Quaternion q = rnd.quat();
    const Mat3 lhs = quat_to_rotation(p * q);
    const Mat3 rhs = quat_to_rotation(p) * quat_to_rotation(q);
    EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(Geometry, InverseGivesIdentity) {
  oracle::Random rnd(6);
  for (int i = 0; i < 100; ++i) {
    const Quaternion q = rnd.quat();
    const Quaternion e = q * quat_inverse(q);
    EXPECT_NEAR(e.w(), 1.0, 1e-15);
    EXPECT_LT(e.vec().norm(), 1e-15);
  }
}

TEST(Geometry, UnitNormAndHemisphere) {
  const Quaternion q(1.0, 2.0, 3.0, -4.0);
  EXPECT_NEAR(q.norm(), 1.0, 1e-15);
  EXPECT_GE(q.w(), 0.0);
  EXPECT_TRUE(q.was_renormalized());
  EXPECT_FALSE(Quaternion(0.0, 0.0, 0.0, 1.0).was_renormalized());
}

TEST(Geometry, SmallAngleFirstOrder) {
  // ‖C(δq(θ)) − (I − [θ×])‖ shrinks quadratically with |θ|.
  const Vec3 dir = Vec3(0.3, -0.5, 0.8).normalized();
  double prev = 0.0;
  for (double a : {1e-2, 1e-3, 1e-4}) {
    const Vec3 th = a * dir;
    const double err = (quat_to_rotation(small_angle_quat(th)) - (Mat3::Identity() - skew(th))).norm();
    EXPECT_LT(err, a * a);
    if (prev > 0.0) EXPECT_NEAR(prev / err, 100.0, 1.0);
    prev = err;
  }
}

TEST(Geometry, RotationVectorRoundTrip) {
  oracle::Random rnd(8);
  for (int i = 0; i < 200; ++i) {
    const Vec3 th = rnd.vec(1.5);
    EXPECT_LT((quat_to_rotation_vector(small_angle_quat(th)) - th).norm(), 1e-12);
  }
}

TEST(Geometry, ErrorMatchesPerturbation) {
  oracle::Random rnd(9);
  for (int i = 0; i < 100; ++i) {
    const Quaternion q = rnd.quat();
    const Vec3 th = rnd.vec(0.1);
    EXPECT_LT((quat_error(small_angle_quat(th) * q, q) - th).norm(), 1e-12);
  }
}

TEST(Geometry, SkewMatchesCross) {
  const Vec3 a(1.0, -2.0, 0.5), b(0.3, 4.0, -1.0);
  EXPECT_LT((skew(a) * b - a.cross(b)).norm(), 1e-15);
  EXPECT_EQ(skew(Vec3::UnitZ()) * Vec3::UnitX(), Vec3::UnitY());
  EXPECT_EQ(skew(a) * a, Vec3::Zero());
}

TEST(Geometry, DerivativeMatchesFiniteDifference) {
  // q(t ± h) = δq(±ω h) ⊗ q(t) has derivative ½ Ω(ω) q.
  oracle::Random rnd(10);
  for (int i = 0; i < 50; ++i) {
    const Quaternion q = rnd.quat();
    const Vec3 w = rnd.vec(2.0);
    const double h = 1e-6;
    const Vec4 qp = quat_multiply(small_angle_quat(w * h), q).coeffs();
    const Vec4 qm = quat_multiply(small_angle_quat(-w * h), q).coeffs();
    const Vec4 fd = (qp - qm) / (2.0 * h);
    EXPECT_LT((fd - quat_derivative(q, w)).cwiseAbs().maxCoeff(), 1e-8);
  }
}

}  // namespace
