#pragma once

#include <limits>
#include <string>

#include <Eigen/Dense>

#include "resest/errors.hpp"
#include "resest/linalg.hpp"
#include "resest/model.hpp"

namespace resest {

enum class Mode { Normal, Emergency };

inline const char* to_string(Mode mode) {
  return mode == Mode::Normal ? "normal" : "emergency";
}

struct EstimatorState {
  VectorXd x_hat;
  MatrixXd P;
  Mode mode = Mode::Normal;
  VectorXd x_hat_prev;

  static EstimatorState initial(const VectorXd& x_hat0, const MatrixXd& P0) {
    return {x_hat0, P0, Mode::Normal, x_hat0};
  }
};

struct GainPair {
  MatrixXd K_G;
  MatrixXd K_I;

  MatrixXd stacked() const {
    MatrixXd K(K_G.rows(), K_G.cols() + K_I.cols());
    K << K_G, K_I;
    return K;
  }

  static GainPair split(const MatrixXd& K, Eigen::Index m_G) {
    return {K.leftCols(m_G), K.rightCols(K.cols() - m_G)};
  }
};

/// Stacked output C = [C_G; C_I], block-diagonal noise Sigma_y and the
/// selector D = diag(0, I) that passes only the IMU block.
struct StackedSensorForms {
  MatrixXd C;
  MatrixXd Sigma_y;
  MatrixXd D;

  static StackedSensorForms from(const SystemModel& model) {
    const auto mg = model.m_G();
    const auto mi = model.m_I();
    StackedSensorForms s;
    s.C.resize(mg + mi, model.n());
    s.C << model.C_G, model.C_I;
    s.Sigma_y = MatrixXd::Zero(mg + mi, mg + mi);
    s.Sigma_y.topLeftCorner(mg, mg) = model.Sigma_G;
    s.Sigma_y.bottomRightCorner(mi, mi) = model.Sigma_I;
    s.D = MatrixXd::Zero(mg + mi, mg + mi);
    s.D.bottomRightCorner(mi, mi).setIdentity();
    return s;
  }
};

inline VectorXd predict(const EstimatorState& est, const SystemModel& model,
                        const VectorXd& u) {
  detail::require(est.x_hat.size() == model.n(),
                  "predict: estimate has dimension " +
                      std::to_string(est.x_hat.size()));
  detail::require(u.size() == model.p(),
                  "predict: input has dimension " + std::to_string(u.size()));
  return model.A * est.x_hat + model.B * u;
}

/// f(P, K): error covariance after one step with gain K.
inline MatrixXd covariance_update(const MatrixXd& P_prev, const GainPair& gain,
                                  const SystemModel& model,
                                  const StackedSensorForms& stacked) {
  const auto n = model.n();
  detail::require(P_prev.rows() == n && P_prev.cols() == n,
                  "covariance_update: P has shape " + detail::dims(P_prev));
  const MatrixXd K = gain.stacked();
  detail::require(K.rows() == n && K.cols() == stacked.C.rows(),
                  "covariance_update: gain has shape " + detail::dims(K));
  const MatrixXd I = MatrixXd::Identity(n, n);
  const MatrixXd M = model.A - K * stacked.C * model.A + K * stacked.D * stacked.C;
  const MatrixXd N = I - K * stacked.C;
  const MatrixXd P = M * P_prev * M.transpose() +
                     N * model.Sigma_w * N.transpose() +
                     K * stacked.Sigma_y * K.transpose();
  return symmetrize(P);
}

namespace detail {

/// Solves K * S = numerator for symmetric positive definite S.
inline MatrixXd right_solve_spd(const MatrixXd& numerator, const MatrixXd& S,
                                const char* what) {
  if (S.size() == 0) return MatrixXd::Zero(numerator.rows(), 0);
  Eigen::LDLT<MatrixXd> ldlt(S);
  const VectorXd d = ldlt.vectorD().cwiseAbs();
  if (ldlt.info() != Eigen::Success || d.minCoeff() <= 0.0 ||
      d.minCoeff() < 1e-14 * d.maxCoeff()) {
    Eigen::JacobiSVD<MatrixXd> svd(S);
    const auto& sv = svd.singularValues();
    const double cond = sv(sv.size() - 1) > 0.0
                            ? sv(0) / sv(sv.size() - 1)
                            : std::numeric_limits<double>::infinity();
    throw NumericalError(std::string(what) +
                         ": singular innovation covariance (condition number " +
                         std::to_string(cond) + ")");
  }
  return ldlt.solve(numerator.transpose()).transpose();
}

}  // namespace detail

/// g(P): the gain minimizing trace f(P, K).
inline GainPair optimal_gain(const MatrixXd& P_prev, const SystemModel& model,
                             const StackedSensorForms& stacked) {
  const MatrixXd H = stacked.C * model.A - stacked.D * stacked.C;
  const MatrixXd numerator =
      model.A * P_prev * H.transpose() + model.Sigma_w * stacked.C.transpose();
  const MatrixXd S = H * P_prev * H.transpose() +
                     stacked.C * model.Sigma_w * stacked.C.transpose() +
                     stacked.Sigma_y;
  return GainPair::split(
      detail::right_solve_spd(numerator, symmetrize(S), "optimal_gain"),
      model.m_G());
}

/// Derivative of trace f(P, K) with respect to K, up to a factor of 2.
/// Vanishes at K = g(P).
inline MatrixXd gain_stationarity_residual(const MatrixXd& P_prev,
                                           const GainPair& gain,
                                           const SystemModel& model,
                                           const StackedSensorForms& stacked) {
  const MatrixXd K = gain.stacked();
  const MatrixXd I = MatrixXd::Identity(model.n(), model.n());
  const MatrixXd H = stacked.C * model.A - stacked.D * stacked.C;
  const MatrixXd M = model.A - K * H;
  return M * P_prev * (-H).transpose() -
         (I - K * stacked.C) * model.Sigma_w * stacked.C.transpose() +
         K * stacked.Sigma_y;
}

/// C_I (A - I): how the IMU innovation sees the previous estimation error.
/// Zero exactly when the drift output matrix C_I (I - A^-1) is zero.
inline MatrixXd imu_error_coupling(const SystemModel& model) {
  return model.C_I * (model.A - MatrixXd::Identity(model.n(), model.n()));
}

inline bool imu_drift_decoupled(const SystemModel& model) {
  const MatrixXd c = imu_error_coupling(model);
  if (c.size() == 0) return true;
  const double scale = std::max(1.0, model.A.cwiseAbs().maxCoeff());
  return c.cwiseAbs().maxCoeff() <= 1e-12 * scale;
}

/// Time-invariant IMU gain Sigma_w C_I^T (C_I Sigma_w C_I^T + Sigma_I)^-1,
/// optimal for the IMU-only problem when the drift output matrix is zero.
inline MatrixXd emergency_gain(const SystemModel& model) {
  const MatrixXd S =
      model.C_I * model.Sigma_w * model.C_I.transpose() + model.Sigma_I;
  return detail::right_solve_spd(model.Sigma_w * model.C_I.transpose(),
                                 symmetrize(S), "emergency_gain");
}

/// Optimal gain for the problem with the GPS rows removed.
inline MatrixXd imu_only_optimal_gain(const MatrixXd& P_prev,
                                      const SystemModel& model) {
  const MatrixXd H = imu_error_coupling(model);
  const MatrixXd numerator =
      model.A * P_prev * H.transpose() + model.Sigma_w * model.C_I.transpose();
  const MatrixXd S = H * P_prev * H.transpose() +
                     model.C_I * model.Sigma_w * model.C_I.transpose() +
                     model.Sigma_I;
  return detail::right_solve_spd(numerator, symmetrize(S),
                                 "imu_only_optimal_gain");
}

/// Gains for the given mode. Emergency mode always has K_G == 0.
inline GainPair mode_gain(Mode mode, const MatrixXd& P_prev,
                          const SystemModel& model,
                          const StackedSensorForms& stacked) {
  if (mode == Mode::Normal) return optimal_gain(P_prev, model, stacked);
  GainPair gain;
  gain.K_G = MatrixXd::Zero(model.n(), model.m_G());
  gain.K_I = imu_drift_decoupled(model) ? emergency_gain(model)
                                        : imu_only_optimal_gain(P_prev, model);
  return gain;
}

/// One emergency-mode covariance step, f(P, [0, K_I]).
inline MatrixXd emergency_covariance_step(const MatrixXd& P_prev,
                                          const SystemModel& model,
                                          const StackedSensorForms& stacked) {
  return covariance_update(
      P_prev, mode_gain(Mode::Emergency, P_prev, model, stacked), model,
      stacked);
}

/// Fused estimate for step k in the mode already stored in `est`.
inline EstimatorState fuse(const EstimatorState& est, const SystemModel& model,
                           const StackedSensorForms& stacked,
                           const VectorXd& u, const VectorXd& y_G,
                           const VectorXd& y_I) {
  detail::require(y_G.size() == model.m_G(),
                  "fuse: GPS measurement has dimension " +
                      std::to_string(y_G.size()));
  detail::require(y_I.size() == model.m_I(),
                  "fuse: IMU measurement has dimension " +
                      std::to_string(y_I.size()));
  const VectorXd x_pred = predict(est, model, u);
  const GainPair gain = mode_gain(est.mode, est.P, model, stacked);

  EstimatorState next;
  next.mode = est.mode;
  next.x_hat_prev = est.x_hat;
  next.x_hat = x_pred + gain.K_I * (y_I - model.C_I * (x_pred - est.x_hat));
  if (est.mode == Mode::Normal)
    next.x_hat += gain.K_G * (y_G - model.C_G * x_pred);
  next.P = covariance_update(est.P, gain, model, stacked);
  return next;
}

}  // namespace resest
