#pragma once

#include <cmath>
#include <limits>
#include <string>

#include <Eigen/Dense>

#include "resest/errors.hpp"
#include "resest/linalg.hpp"
#include "resest/model.hpp"

namespace resest {

// ---------------------------------------------------------------------------
// Chi-square distribution

namespace detail {

// Series expansion of the regularized lower incomplete gamma P(a, x),
// convergent for x < a + 1.
inline double gamma_p_series(double a, double x) {
  double term = 1.0 / a;
  double sum = term;
  for (int i = 1; i < 10000; ++i) {
    term *= x / (a + i);
    sum += term;
    if (std::abs(term) < std::abs(sum) * 1e-17) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Continued fraction (modified Lentz) for the regularized upper incomplete
// gamma Q(a, x), convergent for x >= a + 1.
inline double gamma_q_continued_fraction(double a, double x) {
  constexpr double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < 10000; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < 1e-17) break;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

}  // namespace detail

/// Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x).
inline double regularized_gamma_q(double a, double x) {
  if (x <= 0.0) return 1.0;
  if (x < a + 1.0) return 1.0 - detail::gamma_p_series(a, x);
  return detail::gamma_q_continued_fraction(a, x);
}

/// P(chi2_df > x).
inline double chi2_upper_tail(int df, double x) {
  return regularized_gamma_q(0.5 * df, 0.5 * x);
}

/// The value q with P(chi2_df > q) = alpha, by bisection on the upper tail.
inline double chi2_quantile(int df, double alpha) {
  if (df <= 0) throw InvalidInput("chi2_quantile: df must be positive");
  if (!(alpha > 0.0 && alpha < 1.0))
    throw InvalidInput("chi2_quantile: alpha must lie in (0, 1), got " +
                       std::to_string(alpha));
  double lo = 0.0;
  double hi = std::max(1.0, static_cast<double>(df));
  while (chi2_upper_tail(df, hi) > alpha) {
    lo = hi;
    hi *= 2.0;
  }
  for (int i = 0; i < 200 && hi - lo > 1e-13 * std::max(1.0, hi); ++i) {
    const double mid = 0.5 * (lo + hi);
    if (chi2_upper_tail(df, mid) > alpha)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

// ---------------------------------------------------------------------------
// Forgetting-factor CUSUM

struct DetectorConfig {
  double alpha = 0.01;
  double delta = 0.15;
  int df = 2;
  bool enabled = true;

  void validate() const {
    if (!(alpha > 0.0 && alpha < 1.0))
      throw InvalidInput("detector alpha must lie in (0, 1), got " +
                         std::to_string(alpha));
    if (!(delta > 0.0 && delta < 1.0))
      throw InvalidInput("detector forgetting factor delta must lie in (0, 1), got " +
                         std::to_string(delta));
    if (df <= 0) throw InvalidInput("detector df must be positive");
  }
};

struct DetectorState {
  double S = 0.0;
  double threshold = std::numeric_limits<double>::infinity();
  double delta = 0.15;
  bool alarmed = false;

  /// Threshold chi2_df(alpha) / (1 - delta); infinite when disabled.
  static DetectorState initial(const DetectorConfig& config) {
    config.validate();
    DetectorState det;
    det.delta = config.delta;
    if (config.enabled)
      det.threshold =
          chi2_quantile(config.df, config.alpha) / (1.0 - config.delta);
    return det;
  }
};

/// d_hat together with its predicted covariance and normalized magnitude.
struct Residual {
  VectorXd d_hat;
  MatrixXd P_d;
  double normalized = 0.0;
};

/// d_hat_k = y_G - C_G (A x_hat_{k-1} + B u_{k-1}). Must be given the previous
/// fused estimate, never the current one.
inline VectorXd residual(const VectorXd& y_G, const VectorXd& x_hat_prev,
                         const VectorXd& u_prev, const SystemModel& model) {
  detail::require(y_G.size() == model.m_G(), "residual: y_G has dimension " +
                                                 std::to_string(y_G.size()));
  detail::require(x_hat_prev.size() == model.n(),
                  "residual: estimate has dimension " +
                      std::to_string(x_hat_prev.size()));
  detail::require(u_prev.size() == model.p(),
                  "residual: input has dimension " +
                      std::to_string(u_prev.size()));
  return y_G - model.C_G * (model.A * x_hat_prev + model.B * u_prev);
}

/// P^d_k = C_G (A P_{k-1} A^T + Sigma_w) C_G^T + Sigma_G.
inline MatrixXd residual_covariance(const MatrixXd& P_prev,
                                    const SystemModel& model) {
  detail::require(P_prev.rows() == model.n() && P_prev.cols() == model.n(),
                  "residual_covariance: P has shape " + detail::dims(P_prev));
  return symmetrize(model.C_G *
                        (model.A * P_prev * model.A.transpose() + model.Sigma_w) *
                        model.C_G.transpose() +
                    model.Sigma_G);
}

/// d^T P_d^-1 d via a solve, not an explicit inverse.
inline double normalized_residual(const VectorXd& d_hat, const MatrixXd& P_d) {
  Eigen::LDLT<MatrixXd> ldlt(P_d);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
      ldlt.vectorD().minCoeff() <= 0.0)
    throw NumericalError("residual covariance is not positive definite");
  const VectorXd z = ldlt.solve(d_hat);
  return std::max(0.0, d_hat.dot(z));
}

inline Residual make_residual(VectorXd d_hat, MatrixXd P_d) {
  Residual r{std::move(d_hat), std::move(P_d), 0.0};
  r.normalized = normalized_residual(r.d_hat, r.P_d);
  return r;
}

/// S_k = delta S_{k-1} + d_hat^T P_d^-1 d_hat.
inline double cusum_update(double S_prev, const VectorXd& d_hat,
                           const MatrixXd& P_d, double delta) {
  detail::require(S_prev >= 0.0, "cusum_update: S must be nonnegative");
  return delta * S_prev + normalized_residual(d_hat, P_d);
}

/// Strict: S exactly at the threshold does not alarm.
inline bool alarm(const DetectorState& det) { return det.S > det.threshold; }

/// Advances the statistic by one residual and refreshes the alarm flag.
inline DetectorState detector_step(const DetectorState& det,
                                   const Residual& r) {
  DetectorState next = det;
  next.S = det.delta * det.S + r.normalized;
  next.alarmed = alarm(next);
  return next;
}

}  // namespace resest
