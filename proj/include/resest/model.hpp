#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "resest/errors.hpp"
#include "resest/linalg.hpp"

namespace resest {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Linear plant with an absolute (GPS) sensor and a relative (IMU) sensor:
///
///   x_k   = A x_{k-1} + B u_{k-1} + w_{k-1}
///   y^G_k = C_G x_k + d_k + v^G_k
///   y^I_k = C_I (x_k - x_{k-1}) + v^I_k
struct SystemModel {
  MatrixXd A;
  MatrixXd B;
  MatrixXd C_G;
  MatrixXd C_I;
  MatrixXd Sigma_w;
  MatrixXd Sigma_G;
  MatrixXd Sigma_I;

  Eigen::Index n() const { return A.rows(); }
  Eigen::Index p() const { return B.cols(); }
  Eigen::Index m_G() const { return C_G.rows(); }
  Eigen::Index m_I() const { return C_I.rows(); }
};

/// Planar double integrator sampled at 0.01 s, state [r_x, r_y, v_x, v_y].
/// GPS reads positions, the IMU reads velocity increments.
inline SystemModel uav_model() {
  constexpr double dt = 0.01;
  SystemModel m;
  m.A = MatrixXd::Identity(4, 4);
  m.A(0, 2) = dt;
  m.A(1, 3) = dt;
  m.B = MatrixXd::Zero(4, 2);
  m.B(2, 0) = dt;
  m.B(3, 1) = dt;
  m.C_G = MatrixXd::Zero(2, 4);
  m.C_G(0, 0) = 1.0;
  m.C_G(1, 1) = 1.0;
  m.C_I = MatrixXd::Zero(2, 4);
  m.C_I(0, 2) = 1.0;
  m.C_I(1, 3) = 1.0;
  m.Sigma_w = 1e-4 * MatrixXd::Identity(4, 4);
  m.Sigma_G = 1e-3 * MatrixXd::Identity(2, 2);
  m.Sigma_I = 1e-3 * MatrixXd::Identity(2, 2);
  return m;
}

/// Lists violated model invariants. Empty means valid.
inline std::vector<std::string> validate_model(const SystemModel& m) {
  std::vector<std::string> findings;
  const auto n = m.A.rows();
  if (n == 0) findings.emplace_back("A is empty");
  if (m.A.rows() != m.A.cols())
    findings.push_back("A must be square, got " + detail::dims(m.A));
  if (m.B.rows() != n)
    findings.push_back("B has " + std::to_string(m.B.rows()) +
                       " rows, expected " + std::to_string(n));
  if (m.C_G.cols() != n)
    findings.push_back("C_G has " + std::to_string(m.C_G.cols()) +
                       " columns, expected " + std::to_string(n));
  if (m.C_I.cols() != n)
    findings.push_back("C_I has " + std::to_string(m.C_I.cols()) +
                       " columns, expected " + std::to_string(n));

  auto check_cov = [&](const MatrixXd& s, const char* name, Eigen::Index dim,
                       bool strict) {
    if (s.rows() != dim || s.cols() != dim) {
      findings.push_back(std::string(name) + " must be " + std::to_string(dim) +
                         "x" + std::to_string(dim) + ", got " +
                         detail::dims(s));
      return;
    }
    if (dim == 0) return;
    if (!is_symmetric(s)) {
      findings.push_back(std::string(name) + " is not symmetric");
      return;
    }
    const double lo = min_eigenvalue(s);
    if (strict && lo <= 0.0)
      findings.push_back(std::string(name) +
                         " is not positive definite (min eigenvalue " +
                         std::to_string(lo) + ")");
    else if (!strict && lo < -1e-12)
      findings.push_back(std::string(name) +
                         " is not positive semidefinite (min eigenvalue " +
                         std::to_string(lo) + ")");
  };
  check_cov(m.Sigma_w, "Sigma_w", n, false);
  check_cov(m.Sigma_G, "Sigma_G", m.C_G.rows(), true);
  check_cov(m.Sigma_I, "Sigma_I", m.C_I.rows(), true);

  if (m.A.rows() == m.A.cols() && n > 0) {
    Eigen::FullPivLU<MatrixXd> lu(m.A);
    if (!lu.isInvertible()) findings.emplace_back("A is singular");
  }
  return findings;
}

inline void require_valid(const SystemModel& m) {
  const auto findings = validate_model(m);
  if (findings.empty()) return;
  std::string msg = "invalid model:";
  for (const auto& f : findings) msg += " " + f + ";";
  throw InvalidInput(msg);
}

struct PlantState {
  VectorXd x;
  VectorXd x_prev;
  long k = 0;

  /// x_prev starts equal to x0 so the first IMU reading is pure noise.
  static PlantState initial(const VectorXd& x0) { return {x0, x0, 0}; }
};

inline PlantState step_dynamics(const SystemModel& model,
                                const PlantState& state, const VectorXd& u,
                                const VectorXd& w) {
  detail::require(state.x.size() == model.n(),
                  "step_dynamics: state has dimension " +
                      std::to_string(state.x.size()));
  detail::require(u.size() == model.p(), "step_dynamics: input has dimension " +
                                             std::to_string(u.size()));
  detail::require(w.size() == model.n(),
                  "step_dynamics: process noise has dimension " +
                      std::to_string(w.size()));
  return {model.A * state.x + model.B * u + w, state.x, state.k + 1};
}

enum class AttackKind { None, ConstantBias, Ramp, CustomSequence };

inline const char* to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::None: return "none";
    case AttackKind::ConstantBias: return "constant-bias";
    case AttackKind::Ramp: return "ramp";
    case AttackKind::CustomSequence: return "custom-sequence";
  }
  return "none";
}

/// Open-loop spoofing signal added to the GPS output.
struct AttackSignal {
  AttackKind kind = AttackKind::None;
  VectorXd d;
  long start_step = 0;
  std::vector<VectorXd> sequence;

  bool active_at(long k) const {
    return kind != AttackKind::None && k >= start_step;
  }

  /// d_k for a sensor of dimension `m_G`.
  VectorXd at(long k, Eigen::Index m_G) const {
    if (!active_at(k)) return VectorXd::Zero(m_G);
    switch (kind) {
      case AttackKind::ConstantBias:
        detail::require(d.size() == m_G, "attack d has wrong dimension");
        return d;
      case AttackKind::Ramp:
        detail::require(d.size() == m_G, "attack d has wrong dimension");
        return static_cast<double>(k - start_step + 1) * d;
      case AttackKind::CustomSequence: {
        const auto idx = static_cast<std::size_t>(k - start_step);
        if (idx >= sequence.size())
          throw InvalidInput("attack sequence too short: step " +
                             std::to_string(k) + " needs entry " +
                             std::to_string(idx) + " of " +
                             std::to_string(sequence.size()));
        detail::require(sequence[idx].size() == m_G,
                        "attack sequence entry has wrong dimension");
        return sequence[idx];
      }
      case AttackKind::None: break;
    }
    return VectorXd::Zero(m_G);
  }
};

inline VectorXd measure_gps(const SystemModel& model, const PlantState& state,
                            const AttackSignal& attack, const VectorXd& v_G) {
  detail::require(v_G.size() == model.m_G(),
                  "measure_gps: noise has dimension " +
                      std::to_string(v_G.size()));
  return model.C_G * state.x + attack.at(state.k, model.m_G()) + v_G;
}

inline VectorXd measure_imu(const SystemModel& model, const PlantState& state,
                            const VectorXd& v_I) {
  detail::require(v_I.size() == model.m_I(),
                  "measure_imu: noise has dimension " +
                      std::to_string(v_I.size()));
  return model.C_I * (state.x - state.x_prev) + v_I;
}

// ---------------------------------------------------------------------------
// Random streams

/// splitmix64 finalizer; used to derive independent seeds.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : engine_(seed) {}

  VectorXd standard_normal(Eigen::Index dim) {
    VectorXd z(dim);
    for (Eigen::Index i = 0; i < dim; ++i) z(i) = normal_(engine_);
    return z;
  }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_;
};

/// Per-scenario streams for process, GPS and IMU noise.
struct NoiseStreams {
  RngStream process;
  RngStream gps;
  RngStream imu;

  explicit NoiseStreams(std::uint64_t master_seed)
      : process(mix_seed(master_seed, 1)),
        gps(mix_seed(master_seed, 2)),
        imu(mix_seed(master_seed, 3)) {}
};

/// Zero-mean Gaussian with a fixed covariance. The covariance is factored
/// once as V sqrt(max(L, 0)); eigenvalues below -1e-12 are rejected.
class GaussianSampler {
 public:
  explicit GaussianSampler(const MatrixXd& sigma) {
    detail::require(sigma.rows() == sigma.cols(),
                    "covariance must be square, got " + detail::dims(sigma));
    detail::require(is_symmetric(sigma), "covariance is not symmetric");
    if (sigma.size() == 0) {
      factor_.resize(0, 0);
      return;
    }
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(symmetrize(sigma));
    if (eig.info() != Eigen::Success)
      throw InvalidInput("covariance factorization failed");
    VectorXd ev = eig.eigenvalues();
    if (ev.minCoeff() < -1e-12)
      throw InvalidInput("covariance is not positive semidefinite (min "
                         "eigenvalue " +
                         std::to_string(ev.minCoeff()) + ")");
    ev = ev.cwiseMax(0.0).cwiseSqrt();
    factor_ = eig.eigenvectors() * ev.asDiagonal();
  }

  Eigen::Index dim() const { return factor_.rows(); }

  VectorXd operator()(RngStream& stream) const {
    return factor_ * stream.standard_normal(factor_.cols());
  }

 private:
  MatrixXd factor_;
};

inline VectorXd sample_noise(RngStream& stream, const MatrixXd& sigma) {
  return GaussianSampler(sigma)(stream);
}

}  // namespace resest
