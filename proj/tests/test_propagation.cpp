#include "oracles.hpp"

#include "smsckf/augmentation.hpp"
#include "smsckf/propagation.hpp"
#include "smsckf/update.hpp"

#include <gtest/gtest.h>
#include <unsupported/Eigen/MatrixFunctions>

#include <numbers>

namespace {

using namespace smsckf;

const Vec3 kGravity(0.0, 0.0, -9.81);

FilterState hover_state() {
  ImuState imu;
  imu.p = Vec3(0.0, 0.0, 1.5);
  return make_filter_state(imu, StereoExtrinsics{}, NoiseParams{});
}

ImuSample sample(double t, const Vec3& w, const Vec3& a) { return {t, w, a}; }

TEST(Propagation, TransitionMatchesMatrixExponential) {
  oracle::Random rnd(1);
  for (int i = 0; i < 50; ++i) {
    const ImuState imu = rnd.imu();
    const auto [F, G] = continuous_jacobians(imu, rnd.vec(1.0), rnd.vec(10.0));
    const double dt = 0.005;
    const MatX expm = (MatX(F) * dt).exp();
    EXPECT_LT((MatX(transition_matrix(F, dt)) - expm).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Propagation, ZeroDynamicsGiveIdentity) {
  EXPECT_EQ(transition_matrix(Mat21::Zero(), 0.01), Mat21::Identity());
}

TEST(Propagation, DiscreteNoiseIsPsd) {
  oracle::Random rnd(2);
  for (int i = 0; i < 20; ++i) {
    const auto [F, G] = continuous_jacobians(rnd.imu(), rnd.vec(1.0), rnd.vec(10.0));
    const TransitionPair tp = discretize(F, G, NoiseParams{}, 0.005);
    EXPECT_EQ(tp.Qk, tp.Qk.transpose());
    EXPECT_GE(min_eigenvalue(MatX(tp.Qk)), -1e-18);
  }
}

TEST(Propagation, RejectsNonPositiveStep) {
  const auto [F, G] = continuous_jacobians(ImuState{}, Vec3::Zero(), Vec3::Zero());
  EXPECT_THROW(discretize(F, G, NoiseParams{}, 0.0), PropagationError);
  FilterState s = hover_state();
  EXPECT_THROW(propagate(s, sample(1.0, Vec3::Zero(), Vec3::Zero()), sample(1.0, Vec3::Zero(), Vec3::Zero())),
               PropagationError);
}

TEST(Propagation, AttitudeBlockForYawRate) {
  const auto [F, G] = continuous_jacobians(ImuState{}, Vec3(0.0, 0.0, 1.0), Vec3::Zero());
  Mat3 expected;
  expected << 0, 1, 0, -1, 0, 0, 0, 0, 0;
  EXPECT_EQ(Mat3(F.block<3, 3>(0, 0)), expected);
  EXPECT_EQ(Mat3(F.block<3, 3>(0, 3)), -Mat3::Identity());
  EXPECT_TRUE(F.bottomRows<6>().isZero());
  EXPECT_TRUE(G.bottomRows<6>().isZero());
}

TEST(Propagation, HoverStaysPut) {
  FilterState s = hover_state();
  const Vec3 f = -kGravity;
  for (int k = 0; k < 200; ++k) {
    propagate_in_place(s, sample(0.005 * k, Vec3::Zero(), f), sample(0.005 * (k + 1), Vec3::Zero(), f));
  }
  EXPECT_LT((s.imu.p - Vec3(0.0, 0.0, 1.5)).norm(), 1e-12);
  EXPECT_LT(s.imu.v.norm(), 1e-12);
  EXPECT_NEAR(s.imu.timestamp, 1.0, 1e-12);
}

TEST(Propagation, ConstantRateIntegratesAngle) {
  FilterState s = hover_state();
  const Vec3 w(0.0, 0.0, 1.0);
  const Vec3 f = -kGravity;
  for (int k = 0; k < 200; ++k) {
    propagate_in_place(s, sample(0.005 * k, w, f), sample(0.005 * (k + 1), w, f));
  }
  const Quaternion expected = small_angle_quat(Vec3(0.0, 0.0, 1.0));
  EXPECT_LT(quat_error(expected, s.imu.q_IG).norm(), 1e-9);
}

TEST(Propagation, ConstantAccelerationIsExact) {
  FilterState s = hover_state();
  const Vec3 acc(0.5, -0.2, 0.0);
  const Vec3 f = acc - kGravity;
  for (int k = 0; k < 400; ++k) {
    propagate_in_place(s, sample(0.005 * k, Vec3::Zero(), f), sample(0.005 * (k + 1), Vec3::Zero(), f));
  }
  EXPECT_LT((s.imu.p - (Vec3(0.0, 0.0, 1.5) + 0.5 * acc * 4.0)).norm(), 1e-12);
  EXPECT_LT((s.imu.v - acc * 2.0).norm(), 1e-12);
}

TEST(Propagation, ConstraintLeavesStaticTransitionAlone) {
  const ImuState imu;
  const LinearizationPoint lp{imu.q_IG, Vec3::Zero(), Vec3(0.0, 0.0, 1.0)};
  const auto [F, G] = continuous_jacobians(imu, Vec3::Zero(), -kGravity);
  const Mat21 Phi = transition_matrix(F, 0.005);
  // With zero motion the nominal state after the step has v = g_eff dt = 0.
  const Mat21 star = enforce_observability(Phi, lp, lp, kGravity);
  EXPECT_LT((star - Phi).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Propagation, ConstraintMapsBasisAndKeepsTranslationColumns) {
  oracle::Random rnd(4);
  for (int i = 0; i < 100; ++i) {
    const ImuState imu = rnd.imu();
    const Vec3 w = rnd.vec(1.0), a = rnd.vec(10.0);
    const auto [F, G] = continuous_jacobians(imu, w, a);
    const Mat21 Phi = transition_matrix(F, 0.005);
    const LinearizationPoint lp0{imu.q_IG, imu.v, imu.p};
    const ImuState next = rk4_step(imu, {0.0, w, a}, {0.005, w, a}, kGravity);
    const LinearizationPoint lp1{next.q_IG, next.v, next.p};
    const Mat21 star = enforce_observability(Phi, lp0, lp1, kGravity);
    EXPECT_LT(observability_residual(star, lp0, lp1, kGravity), 1e-8);
    const Mat21x4 N0 = imu_unobservable_basis(lp0, kGravity);
    EXPECT_LT((star * N0.leftCols<3>() - Phi * N0.leftCols<3>()).norm(), 1e-15);
    // Only the θ columns of the θ, v and p rows may change.
    Mat21 diff = star - Phi;
    diff.block<3, 3>(0, 0).setZero();
    diff.block<3, 3>(6, 0).setZero();
    diff.block<3, 3>(12, 0).setZero();
    EXPECT_TRUE(diff.isZero());
  }
}

TEST(Propagation, UnconstrainedTransitionViolatesBasis) {
  const ImuState imu;
  const Vec3 w(0.0, 0.0, 0.5), a(1.0, 0.0, 9.81);
  const auto [F, G] = continuous_jacobians(imu, w, a);
  const Mat21 Phi = transition_matrix(F, 0.005);
  const ImuState next = rk4_step(imu, {0.0, w, a}, {0.005, w, a}, kGravity);
  const LinearizationPoint lp0{imu.q_IG, imu.v, imu.p}, lp1{next.q_IG, next.v, next.p};
  EXPECT_GT(observability_residual(Phi, lp0, lp1, kGravity), 1e-10);
}

TEST(Propagation, CameraBlockUntouchedAndImuUncertaintyGrows) {
  FilterState s = hover_state();
  augment_in_place(s, 0.0, 20);
  augment_in_place(s, 0.001, 20);
  oracle::Random rnd(5);
  const MatX P_CC = s.P.bottomRightCorner(12, 12);
  double trace = s.P.topLeftCorner<21, 21>().trace();
  for (int k = 0; k < 100; ++k) {
    const Vec3 w = rnd.vec(0.5), f = -kGravity + rnd.vec(1.0);
    propagate_in_place(s, sample(0.001 + 0.005 * k, w, f), sample(0.001 + 0.005 * (k + 1), w, f));
    EXPECT_EQ(MatX(s.P.bottomRightCorner(12, 12)), P_CC);
    const double tr = s.P.topLeftCorner<21, 21>().trace();
    EXPECT_GE(tr, trace - 1e-15);
    trace = tr;
    EXPECT_EQ(s.P, s.P.transpose());
  }
  EXPECT_GE(min_eigenvalue(s.P), -1e-12);
}

TEST(Propagation, CovarianceMatchesDenseProduct) {
  FilterState s = hover_state();
  augment_in_place(s, 0.0, 20);
  const Vec3 w(0.1, -0.2, 0.3), f(0.4, 0.1, 9.7);
  const ImuSample s0 = sample(0.0, w, f), s1 = sample(0.005, w, f);
  PropagationOptions opt;
  opt.observability_constraint = false;
  const auto [F, G] = continuous_jacobians(s.imu, w, f);
  const TransitionPair tp = discretize(F, G, s.params, 0.005);
  MatX Phi = MatX::Identity(27, 27);
  Phi.topLeftCorner<21, 21>() = tp.Phi;
  MatX Q = MatX::Zero(27, 27);
  Q.topLeftCorner<21, 21>() = tp.Qk;
  const MatX expected = Phi * s.P * Phi.transpose() + Q;
  propagate_in_place(s, s0, s1, opt);
  EXPECT_LT((s.P - expected).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Propagation, InterpolationIsLinear) {
  const ImuSample a{1.0, Vec3(1, 0, 0), Vec3(0, 0, 2)};
  const ImuSample b{2.0, Vec3(3, 0, 0), Vec3(0, 0, 4)};
  const ImuSample m = interpolate(a, b, 1.25);
  EXPECT_DOUBLE_EQ(m.omega_m.x(), 1.5);
  EXPECT_DOUBLE_EQ(m.accel_m.z(), 2.5);
}

}  // namespace
