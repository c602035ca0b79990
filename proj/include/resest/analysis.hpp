#pragma once

#include <cmath>
#include <complex>
#include <limits>
#include <optional>
#include <string>
#include <variant>

#include <Eigen/Dense>

#include "resest/detector.hpp"
#include "resest/errors.hpp"
#include "resest/estimator.hpp"
#include "resest/linalg.hpp"
#include "resest/model.hpp"

namespace resest {

// ---------------------------------------------------------------------------
// Detectability

/// PBH test: (C, A) is detectable iff rank [A - lambda I; C] = n for every
/// eigenvalue with |lambda| >= 1. Rank uses the threshold tol * sigma_max.
inline bool is_detectable(const MatrixXd& C, const MatrixXd& A,
                          double tol = 1e-8) {
  const auto n = A.rows();
  detail::require(A.cols() == n, "is_detectable: A must be square");
  detail::require(C.cols() == n || C.rows() == 0,
                  "is_detectable: C has " + std::to_string(C.cols()) +
                      " columns, expected " + std::to_string(n));
  if (n == 0) return true;
  Eigen::EigenSolver<MatrixXd> eig(A, false);
  if (eig.info() != Eigen::Success)
    throw NumericalError("is_detectable: eigenvalue computation failed");
  // Defective eigenvalues on the unit circle come back perturbed by roughly
  // sqrt(eps); keep them on the unstable side.
  constexpr double unit_margin = 1e-6;
  for (const std::complex<double>& lambda : eig.eigenvalues()) {
    if (std::abs(lambda) < 1.0 - unit_margin) continue;
    Eigen::MatrixXcd pencil(n + C.rows(), n);
    pencil.topRows(n) = A.cast<std::complex<double>>() -
                        lambda * Eigen::MatrixXcd::Identity(n, n);
    if (C.rows() > 0) pencil.bottomRows(C.rows()) = C.cast<std::complex<double>>();
    Eigen::JacobiSVD<Eigen::MatrixXcd> svd(pencil);
    const auto& sv = svd.singularValues();
    const double cutoff = tol * std::max(sv(0), 1e-300);
    Eigen::Index rank = 0;
    for (Eigen::Index i = 0; i < sv.size(); ++i)
      if (sv(i) > cutoff) ++rank;
    if (rank < n) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Stationary covariance

/// Fixed point P = f(P, g(P)) of the normal-mode recursion, iterated from
/// Sigma_w. The returned P satisfies ||f(P, g(P)) - P|| <= tol.
inline MatrixXd stationary_covariance(const SystemModel& model,
                                      double tol = 1e-12,
                                      long max_iter = 100000) {
  if (!is_detectable(model.C_G, model.A))
    throw InvalidInput(
        "stationary_covariance: (C_G, A) is not detectable, no bounded fixed "
        "point");
  const auto stacked = StackedSensorForms::from(model);
  MatrixXd P = model.Sigma_w;
  double residual = std::numeric_limits<double>::infinity();
  for (long i = 0; i < max_iter; ++i) {
    MatrixXd next =
        covariance_update(P, optimal_gain(P, model, stacked), model, stacked);
    residual = spectral_norm(next - P);
    if (residual <= tol) return P;
    P = std::move(next);
  }
  throw ConvergenceError("stationary_covariance: no convergence after " +
                             std::to_string(max_iter) +
                             " iterations (residual " +
                             std::to_string(residual) + ")",
                         P, residual);
}

// ---------------------------------------------------------------------------
// Drift structure of the IMU-only estimator

struct DriftAnalysis {
  MatrixXd C_bar_I;    // C_I (I - A^-1)
  MatrixXd L;          // decoupling gain
  MatrixXd A_bar;      // (I - L C_bar_I) A
  MatrixXd Sigma_bar;  // emergency-mode one-step noise
  bool gps_pair_detectable = false;
  bool drift_pair_detectable = false;
};

/// Sigma_bar = (I - K_I C_I) Sigma_w (I - K_I C_I)^T + K_I Sigma_I K_I^T with
/// the time-invariant emergency gain.
inline MatrixXd emergency_noise(const SystemModel& model) {
  const auto n = model.n();
  if (model.m_I() == 0) return symmetrize(model.Sigma_w);
  const MatrixXd K = emergency_gain(model);
  const MatrixXd N = MatrixXd::Identity(n, n) - K * model.C_I;
  return symmetrize(N * model.Sigma_w * N.transpose() +
                    K * model.Sigma_I * K.transpose());
}

inline MatrixXd decoupling_residual(const SystemModel& model,
                                    const DriftAnalysis& drift) {
  const auto n = model.n();
  const MatrixXd A_inv = model.A.inverse();
  const MatrixXd G = model.C_I * A_inv;
  return (MatrixXd::Identity(n, n) - drift.L * drift.C_bar_I -
          drift.L * drift.C_bar_I * A_inv) *
             model.Sigma_w * G.transpose() -
         drift.L * model.Sigma_I;
}

inline DriftAnalysis drift_matrices(const SystemModel& model) {
  const auto n = model.n();
  Eigen::FullPivLU<MatrixXd> lu(model.A);
  if (model.A.rows() != model.A.cols() || !lu.isInvertible())
    throw InvalidInput("drift_matrices: A must be invertible");
  const MatrixXd I = MatrixXd::Identity(n, n);
  const MatrixXd A_inv = lu.inverse();
  const MatrixXd G = model.C_I * A_inv;

  DriftAnalysis out;
  out.C_bar_I = model.C_I * (I - A_inv);
  // L M = Sigma_w G^T with M = (C_bar + C_bar A^-1) Sigma_w G^T + Sigma_I.
  const MatrixXd M =
      (out.C_bar_I + out.C_bar_I * A_inv) * model.Sigma_w * G.transpose() +
      model.Sigma_I;
  Eigen::FullPivLU<MatrixXd> m_lu(M.transpose());
  if (M.size() > 0 && !m_lu.isInvertible())
    throw NumericalError("drift_matrices: decoupling system is singular");
  out.L = M.size() > 0
              ? MatrixXd(m_lu.solve((model.Sigma_w * G.transpose()).transpose())
                             .transpose())
              : MatrixXd::Zero(n, 0);
  out.A_bar = (I - out.L * out.C_bar_I) * model.A;
  out.Sigma_bar = emergency_noise(model);
  out.gps_pair_detectable = is_detectable(model.C_G, model.A);
  out.drift_pair_detectable = is_detectable(out.C_bar_I, out.A_bar);
  return out;
}

// ---------------------------------------------------------------------------
// Escape time

/// Tolerance on the estimation error: a direction vector (zeta^T P^-1 zeta)
/// or a norm (||zeta||^2 / ||P||, the worst direction).
using Tolerance = std::variant<double, VectorXd>;

inline double tolerance_quadratic_form(const Tolerance& zeta,
                                       const MatrixXd& P) {
  if (const double* norm = std::get_if<double>(&zeta)) {
    const double p = spectral_norm(P);
    return p > 0.0 ? (*norm) * (*norm) / p
                   : std::numeric_limits<double>::infinity();
  }
  const VectorXd& z = std::get<VectorXd>(zeta);
  detail::require(z.size() == P.rows(), "escape_time: zeta has dimension " +
                                            std::to_string(z.size()));
  Eigen::LDLT<MatrixXd> ldlt(P);
  if (ldlt.info() != Eigen::Success || ldlt.vectorD().minCoeff() <= 0.0)
    throw InvalidInput("escape_time: P must be positive definite");
  return z.dot(ldlt.solve(z));
}

/// Steps of IMU-only propagation from P_at_attack until the tolerance test
/// zeta^T P_k^-1 zeta > chi2 first fails.
inline long escape_time_with_threshold(const MatrixXd& P_at_attack,
                                       const SystemModel& model,
                                       const Tolerance& zeta, double chi2,
                                       long max_horizon = 100000) {
  const auto stacked = StackedSensorForms::from(model);
  const bool closed_form = imu_drift_decoupled(model);
  const MatrixXd Sigma_bar = closed_form ? emergency_noise(model) : MatrixXd();
  MatrixXd P = P_at_attack;
  long k = 0;
  double q = tolerance_quadratic_form(zeta, P);
  while (q > chi2) {
    if (k >= max_horizon)
      throw HorizonExceeded("escape_time: tolerance still met after " +
                                std::to_string(max_horizon) +
                                " steps (quadratic form " + std::to_string(q) +
                                ")",
                            q);
    P = closed_form
            ? symmetrize(model.A * P * model.A.transpose() + Sigma_bar)
            : emergency_covariance_step(P, model, stacked);
    ++k;
    q = tolerance_quadratic_form(zeta, P);
  }
  return k;
}

inline long escape_time(const MatrixXd& P_at_attack, const SystemModel& model,
                        const Tolerance& zeta, double alpha, int df,
                        long max_horizon = 100000) {
  return escape_time_with_threshold(P_at_attack, model, zeta,
                                    chi2_quantile(df, alpha), max_horizon);
}

enum class BoundBranch { UnitNorm, General };

inline const char* to_string(BoundBranch b) {
  return b == BoundBranch::UnitNorm ? "unit-norm" : "general";
}

inline BoundBranch bound_branch(double norm_A) {
  return std::abs(norm_A - 1.0) <= 1e-12 ? BoundBranch::UnitNorm
                                         : BoundBranch::General;
}

/// Closed-form lower bound on the isotropic escape time from stationary P,
/// given r = ||zeta||^2 / chi2. Zero when the tolerance is already violated;
/// +inf when the norm bound never reaches r (contractive A).
inline double escape_time_lower_bound_with_threshold(const MatrixXd& P,
                                                     const SystemModel& model,
                                                     double zeta_norm,
                                                     double chi2) {
  if (!imu_drift_decoupled(model))
    throw InvalidInput(
        "escape_time_lower_bound: requires C_I (I - A^-1) = 0; the drift "
        "output matrix of this model is nonzero");
  const double r = zeta_norm * zeta_norm / chi2;
  const double p = spectral_norm(P);
  if (r <= p) return 0.0;
  const double a = spectral_norm(model.A);
  const double s = spectral_norm(emergency_noise(model));
  if (bound_branch(a) == BoundBranch::UnitNorm) {
    if (s <= 0.0) return std::numeric_limits<double>::infinity();
    return (r - p) / s;
  }
  const double a2 = a * a;
  const double c = s / (a2 - 1.0);
  const double ratio = (r + c) / (p + c);
  if (!(ratio > 0.0)) return std::numeric_limits<double>::infinity();
  return std::max(0.0, std::log(ratio) / std::log(a2));
}

inline double escape_time_lower_bound(const MatrixXd& P,
                                      const SystemModel& model,
                                      double zeta_norm, double alpha, int df) {
  return escape_time_lower_bound_with_threshold(P, model, zeta_norm,
                                                chi2_quantile(df, alpha));
}

/// sqrt(chi2_df(alpha) ||P||): radius the error norm stays under with
/// confidence 1 - alpha.
inline double confidence_bound(const MatrixXd& P, double alpha, int df) {
  return std::sqrt(chi2_quantile(df, alpha) * spectral_norm(P));
}

struct EscapeTimeReport {
  std::optional<long> k_escape;
  std::optional<double> k_lower_bound;
  double zeta_norm = 0.0;
  double alpha = 0.01;
  int df = 0;
  MatrixXd stationary_P;
  double norm_A = 0.0;
  BoundBranch branch = BoundBranch::General;
};

/// Isotropic escape time and its lower bound, both from `P`.
inline EscapeTimeReport escape_report(const SystemModel& model,
                                      const MatrixXd& P, double zeta_norm,
                                      double alpha, int df,
                                      long max_horizon = 100000) {
  EscapeTimeReport rep;
  rep.zeta_norm = zeta_norm;
  rep.alpha = alpha;
  rep.df = df;
  rep.stationary_P = P;
  rep.norm_A = spectral_norm(model.A);
  rep.branch = bound_branch(rep.norm_A);
  try {
    rep.k_escape = escape_time(P, model, Tolerance{zeta_norm}, alpha, df,
                               max_horizon);
  } catch (const HorizonExceeded&) {
  }
  if (imu_drift_decoupled(model))
    rep.k_lower_bound = escape_time_lower_bound(P, model, zeta_norm, alpha, df);
  return rep;
}

}  // namespace resest
