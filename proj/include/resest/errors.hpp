#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace resest {

/// Rejected input: dimension mismatch, out-of-range parameter, invalid model.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Configuration file problem. `key_path` names the offending key.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key_path, const std::string& what)
      : std::runtime_error(key_path.empty() ? what : key_path + ": " + what),
        key_path_(std::move(key_path)) {}

  const std::string& key_path() const noexcept { return key_path_; }

 private:
  std::string key_path_;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Fixed-point iteration did not settle. Carries the last iterate.
class ConvergenceError : public NumericalError {
 public:
  ConvergenceError(const std::string& what, Eigen::MatrixXd last_iterate,
                   double residual)
      : NumericalError(what),
        last_iterate_(std::move(last_iterate)),
        residual_(residual) {}

  const Eigen::MatrixXd& last_iterate() const noexcept { return last_iterate_; }
  double residual() const noexcept { return residual_; }

 private:
  Eigen::MatrixXd last_iterate_;
  double residual_;
};

/// Escape-time loop ran past its horizon without the tolerance being violated.
class HorizonExceeded : public NumericalError {
 public:
  HorizonExceeded(const std::string& what, double last_quadratic_form)
      : NumericalError(what), last_quadratic_form_(last_quadratic_form) {}

  double last_quadratic_form() const noexcept { return last_quadratic_form_; }

 private:
  double last_quadratic_form_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string dims(const Eigen::MatrixXd& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

inline void require(bool ok, const std::string& what) {
  if (!ok) throw InvalidInput(what);
}

}  // namespace detail
}  // namespace resest
