#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "resest/analysis.hpp"

namespace resest {
namespace {

VectorXd vec(std::initializer_list<double> v) {
  VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

MatrixXd scalar(double v) { return MatrixXd::Constant(1, 1, v); }

// x_k = x_{k-1} + w, IMU on the state with Sigma_w = Sigma_I = 2, so the
// emergency gain is 1/2 and Sigma_bar = 1.
SystemModel unit_random_walk() {
  SystemModel m;
  m.A = scalar(1.0);
  m.B = scalar(0.0);
  m.C_G = scalar(1.0);
  m.C_I = scalar(1.0);
  m.Sigma_w = scalar(2.0);
  m.Sigma_G = scalar(1.0);
  m.Sigma_I = scalar(2.0);
  return m;
}

TEST(SpectralNorm, Examples) {
  EXPECT_NEAR(spectral_norm(MatrixXd::Identity(4, 4)), 1.0, 1e-15);
  // Largest singular value of [[1, h], [0, 1]] is (h + sqrt(h^2 + 4)) / 2.
  const double h = 0.01;
  EXPECT_NEAR(spectral_norm(uav_model().A), (h + std::sqrt(h * h + 4)) / 2,
              1e-14);
  EXPECT_NEAR(spectral_norm(uav_model().A), 1.0050125, 1e-7);
  MatrixXd d = MatrixXd::Zero(2, 2);
  d(0, 0) = 3;
  d(1, 1) = -5;
  EXPECT_NEAR(spectral_norm(d), 5.0, 1e-14);
}

TEST(IsDetectable, UavPairs) {
  const auto m = uav_model();
  EXPECT_TRUE(is_detectable(m.C_G, m.A));
  EXPECT_FALSE(is_detectable(MatrixXd::Zero(2, 4), m.A));
  EXPECT_FALSE(is_detectable(m.C_I, m.A));  // velocities alone miss position
  EXPECT_TRUE(is_detectable(MatrixXd::Identity(4, 4), m.A));
}

TEST(IsDetectable, StableModesNeedNoObservation) {
  MatrixXd A(2, 2);
  A << 0.4, 0, 0, 1.5;
  MatrixXd C(1, 2);
  C << 0, 1;
  EXPECT_TRUE(is_detectable(C, A));
  C << 1, 0;
  EXPECT_FALSE(is_detectable(C, A));
  EXPECT_TRUE(is_detectable(MatrixXd::Zero(1, 2), 0.5 * MatrixXd::Identity(2, 2)));
}

TEST(IsDetectable, ComplexUnstablePair) {
  MatrixXd A(2, 2);
  A << 0, -1.2, 1.2, 0;  // rotation with |lambda| = 1.2
  MatrixXd C(1, 2);
  C << 1, 0;
  EXPECT_TRUE(is_detectable(C, A));
  EXPECT_FALSE(is_detectable(MatrixXd::Zero(1, 2), A));
}

TEST(StationaryCovariance, UavModelIsFixedPoint) {
  const auto m = uav_model();
  const auto stacked = StackedSensorForms::from(m);
  const MatrixXd P = stationary_covariance(m);
  EXPECT_GT(P.trace(), 0.0);
  EXPECT_LE(spectral_norm(covariance_update(P, optimal_gain(P, m, stacked), m,
                                            stacked) -
                          P),
            1e-12);
  // Running the filter recursion from zero lands on the same matrix.
  MatrixXd Q = MatrixXd::Zero(4, 4);
  for (int k = 0; k < 10000; ++k)
    Q = covariance_update(Q, optimal_gain(Q, m, stacked), m, stacked);
  EXPECT_LE(spectral_norm(Q - P), 1e-10);
}

TEST(StationaryCovariance, ScalarRiccatiByHand) {
  // A = 0.5, C = 1, unit noises, no relative sensor:
  // P = M / (M + 1), M = P / 4 + 1  =>  P^2 + 7P - 4 = 0.
  SystemModel m;
  m.A = scalar(0.5);
  m.B = scalar(0.0);
  m.C_G = scalar(1.0);
  m.C_I = MatrixXd::Zero(0, 1);
  m.Sigma_w = scalar(1.0);
  m.Sigma_G = scalar(1.0);
  m.Sigma_I = MatrixXd::Zero(0, 0);
  EXPECT_NEAR(stationary_covariance(m)(0, 0), (-7.0 + std::sqrt(65.0)) / 2.0,
              1e-11);
}

TEST(StationaryCovariance, NoiselessStablePlantIsExact) {
  SystemModel m = uav_model();
  m.A = 0.9 * MatrixXd::Identity(4, 4);
  m.Sigma_w.setZero();
  EXPECT_LE(stationary_covariance(m).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(StationaryCovariance, Errors) {
  SystemModel m = uav_model();
  m.C_G = m.C_I;
  EXPECT_THROW(stationary_covariance(m), InvalidInput);
  try {
    stationary_covariance(uav_model(), 1e-12, 3);
    FAIL() << "expected ConvergenceError";
  } catch (const ConvergenceError& e) {
    EXPECT_EQ(e.last_iterate().rows(), 4);
    EXPECT_GT(e.residual(), 1e-12);
  }
}

TEST(DriftMatrices, UavModel) {
  const auto m = uav_model();
  const DriftAnalysis d = drift_matrices(m);
  EXPECT_EQ(d.C_bar_I, MatrixXd::Zero(2, 4));
  EXPECT_EQ(d.A_bar - m.A, MatrixXd::Zero(4, 4));
  EXPECT_TRUE(d.gps_pair_detectable);
  EXPECT_FALSE(d.drift_pair_detectable);
  EXPECT_GE(min_eigenvalue(d.Sigma_bar), -1e-15);
  EXPECT_TRUE(is_symmetric(d.Sigma_bar));
  EXPECT_LE(decoupling_residual(m, d).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(DriftMatrices, HalfIdentity) {
  SystemModel m = uav_model();
  m.A = 0.5 * MatrixXd::Identity(4, 4);
  m.C_I = MatrixXd::Identity(4, 4);
  m.Sigma_I = 1e-3 * MatrixXd::Identity(4, 4);
  const DriftAnalysis d = drift_matrices(m);
  EXPECT_TRUE(d.C_bar_I.isApprox(-MatrixXd::Identity(4, 4), 1e-15));
  EXPECT_LE(decoupling_residual(m, d).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(DriftMatrices, SingularARejected) {
  SystemModel m = uav_model();
  m.A.row(0).setZero();
  EXPECT_THROW(drift_matrices(m), InvalidInput);
}

TEST(DriftMatrices, DecouplingHoldsOnRandomModels) {
  std::mt19937_64 rng(31337);
  std::normal_distribution<double> normal;
  std::uniform_int_distribution<int> dim(1, 5);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = dim(rng);
    const int mi = std::uniform_int_distribution<int>(1, n)(rng);
    SystemModel m;
    m.A = MatrixXd::Identity(n, n);
    for (Eigen::Index i = 0; i < m.A.size(); ++i) m.A(i) += 0.3 * normal(rng);
    m.B = MatrixXd::Zero(n, 1);
    m.C_G = MatrixXd::Identity(n, n);
    m.C_I.resize(mi, n);
    for (Eigen::Index i = 0; i < m.C_I.size(); ++i) m.C_I(i) = normal(rng);
    MatrixXd G(n, n);
    for (Eigen::Index i = 0; i < G.size(); ++i) G(i) = normal(rng);
    m.Sigma_w = G * G.transpose() / n;
    m.Sigma_G = MatrixXd::Identity(n, n);
    MatrixXd H(mi, mi);
    for (Eigen::Index i = 0; i < H.size(); ++i) H(i) = normal(rng);
    m.Sigma_I = H * H.transpose() / mi + 0.1 * MatrixXd::Identity(mi, mi);
    if (!Eigen::FullPivLU<MatrixXd>(m.A).isInvertible()) continue;
    const DriftAnalysis d = drift_matrices(m);
    EXPECT_LE(decoupling_residual(m, d).cwiseAbs().maxCoeff(), 1e-10)
        << "trial " << trial;
  }
}

class UavEscape : public ::testing::Test {
 protected:
  SystemModel model = uav_model();
  MatrixXd P = stationary_covariance(model);
};

// Frozen values, computed independently with numpy (stationary P by fixed
// point, then the closed-form emergency recursion).
TEST_F(UavEscape, IsotropicEscapeTime) {
  EXPECT_EQ(escape_time(P, model, Tolerance{2.0}, 0.01, 4), 343);
}

TEST_F(UavEscape, LowerBound) {
  const double bound = escape_time_lower_bound(P, model, 2.0, 0.01, 4);
  EXPECT_NEAR(bound, 275.5943110851358, 1e-6);
  EXPECT_EQ(bound_branch(spectral_norm(model.A)), BoundBranch::General);
}

TEST_F(UavEscape, BoundNeverExceedsEscapeTime) {
  for (double zeta : {1.0, 2.0, 4.0, 8.0}) {
    const long k = escape_time(P, model, Tolerance{zeta}, 0.01, 4);
    const double bound = escape_time_lower_bound(P, model, zeta, 0.01, 4);
    EXPECT_LE(bound, static_cast<double>(k)) << "zeta=" << zeta;
    EXPECT_GT(bound, 0.0);
  }
}

TEST_F(UavEscape, DirectionalFormIsNoShorterThanIsotropic) {
  const long iso = escape_time(P, model, Tolerance{2.0}, 0.01, 4);
  const VectorXd along_x = vec({2.0, 0.0, 0.0, 0.0});
  const VectorXd along_v = vec({0.0, 0.0, 2.0, 0.0});
  EXPECT_GE(escape_time(P, model, Tolerance{along_x}, 0.01, 4), iso);
  EXPECT_GE(escape_time(P, model, Tolerance{along_v}, 0.01, 4), iso);
}

TEST_F(UavEscape, AlreadyIntolerableIsZero) {
  EXPECT_EQ(escape_time(P, model, Tolerance{1e-4}, 0.01, 4), 0);
  EXPECT_EQ(escape_time_lower_bound(P, model, 1e-4, 0.01, 4), 0.0);
}

TEST_F(UavEscape, NormIsMonotoneAlongEmergencyRecursion) {
  const MatrixXd Sigma_bar = emergency_noise(model);
  MatrixXd Pk = P;
  double prev = spectral_norm(Pk);
  for (int k = 0; k < 400; ++k) {
    Pk = model.A * Pk * model.A.transpose() + Sigma_bar;
    const double now = spectral_norm(Pk);
    ASSERT_GE(now, prev);
    prev = now;
  }
}

TEST_F(UavEscape, TerminatesUnderHorizon) {
  EXPECT_LT(escape_time(P, model, Tolerance{8.0}, 0.01, 4, 100000), 100000);
}

TEST(EscapeTime, ScalarArithmeticProgression) {
  const auto m = unit_random_walk();
  ASSERT_NEAR(emergency_noise(m)(0, 0), 1.0, 1e-15);
  // P_k = 1 + k; zeta^2 / chi2 = 11 is reached at k = 10.
  const double chi2 = 1.0 / 11.0;
  EXPECT_EQ(escape_time_with_threshold(scalar(1.0), m, Tolerance{1.0}, chi2), 10);
  EXPECT_EQ(escape_time_with_threshold(scalar(1.0), m,
                                       Tolerance{VectorXd::Ones(1)}, chi2),
            10);
  EXPECT_NEAR(escape_time_lower_bound_with_threshold(scalar(1.0), m, 1.0, chi2),
              10.0, 1e-12);
  EXPECT_EQ(bound_branch(spectral_norm(m.A)), BoundBranch::UnitNorm);
}

TEST(EscapeTime, DegenerateToleranceClampsToZero) {
  const auto m = unit_random_walk();
  EXPECT_EQ(escape_time_lower_bound_with_threshold(scalar(1.0), m, 1.0, 2.0), 0.0);
}

TEST(EscapeTime, StablePlantExceedsHorizon) {
  SystemModel m = unit_random_walk();
  m.A = scalar(0.5);
  try {
    escape_time(scalar(1.0), m, Tolerance{100.0}, 0.01, 1, 1000);
    FAIL() << "expected HorizonExceeded";
  } catch (const HorizonExceeded& e) {
    EXPECT_GT(e.last_quadratic_form(), chi2_quantile(1, 0.01));
  }
}

TEST(EscapeTime, LowerBoundNeedsDecoupledDrift) {
  SystemModel m = uav_model();
  m.C_I = MatrixXd::Identity(4, 4).topRows(2);
  EXPECT_THROW(escape_time_lower_bound(MatrixXd::Identity(4, 4), m, 2.0, 0.01, 4),
               InvalidInput);
}

TEST(EscapeTime, CoupledDriftUsesFullRecursion) {
  SystemModel m = uav_model();
  m.C_I = MatrixXd::Identity(4, 4).topRows(2);
  const auto stacked = StackedSensorForms::from(m);
  const MatrixXd P0 = 1e-3 * MatrixXd::Identity(4, 4);
  const long k = escape_time(P0, m, Tolerance{2.0}, 0.01, 4, 1000000);
  // Independent loop over the generic emergency step.
  MatrixXd Pk = P0;
  long expected = 0;
  const double r = 4.0 / chi2_quantile(4, 0.01);
  while (spectral_norm(Pk) < r) {
    Pk = emergency_covariance_step(Pk, m, stacked);
    ++expected;
  }
  EXPECT_EQ(k, expected);
}

TEST(ConfidenceBound, Examples) {
  EXPECT_NEAR(confidence_bound(MatrixXd::Identity(4, 4), 0.01, 4),
              std::sqrt(13.276704135987625), 1e-9);
  EXPECT_NEAR(confidence_bound(MatrixXd::Identity(4, 4), 0.01, 4), 3.6437, 1e-4);
  EXPECT_EQ(confidence_bound(MatrixXd::Zero(4, 4), 0.01, 4), 0.0);
  const MatrixXd P = stationary_covariance(uav_model());
  EXPECT_NEAR(confidence_bound(2.0 * P, 0.01, 4) / confidence_bound(P, 0.01, 4),
              std::sqrt(2.0), 1e-12);
}

}  // namespace
}  // namespace resest
