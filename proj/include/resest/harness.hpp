#pragma once

#include <cstdint>
#include <cstdio>
#include <exception>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "resest/analysis.hpp"
#include "resest/detector.hpp"
#include "resest/errors.hpp"
#include "resest/estimator.hpp"
#include "resest/model.hpp"

namespace resest {

struct ScenarioConfig {
  SystemModel model = uav_model();
  VectorXd x0 = VectorXd::Zero(4);
  VectorXd target = (VectorXd(2) << 10.0, 10.0).finished();
  double kp = 1.0;
  double kd = 2.0;
  AttackSignal attack{AttackKind::ConstantBias,
                      (VectorXd(2) << 100.0, 100.0).finished(), 700, {}};
  DetectorConfig detector{};
  long steps = 1000;
  std::uint64_t seed = 0;
  double zeta_norm = 2.0;
  long runs = 10;

  /// Throws InvalidInput naming the violated invariant.
  void validate() const {
    require_valid(model);
    detail::require(x0.size() == model.n(), "x0 has dimension " +
                                                std::to_string(x0.size()) +
                                                ", expected " +
                                                std::to_string(model.n()));
    detail::require(model.n() == 2 * model.p(),
                    "PD control needs state = [position, velocity] with "
                    "n = 2p");
    detail::require(target.size() == model.p(),
                    "target has dimension " + std::to_string(target.size()) +
                        ", expected " + std::to_string(model.p()));
    detail::require(kp > 0.0 && kd > 0.0, "controller gains must be positive");
    detail::require(steps >= 1, "steps must be >= 1");
    detail::require(runs >= 1, "runs must be >= 1");
    detail::require(zeta_norm > 0.0, "zeta_norm must be positive");
    detail::require(attack.start_step >= 0, "attack start_step must be >= 0");
    if (attack.kind == AttackKind::ConstantBias ||
        attack.kind == AttackKind::Ramp)
      detail::require(attack.d.size() == model.m_G(),
                      "attack d has dimension " +
                          std::to_string(attack.d.size()) + ", expected " +
                          std::to_string(model.m_G()));
    DetectorConfig det = detector;
    det.df = static_cast<int>(model.m_G());
    det.validate();
  }

  /// Detector configuration with df = m_G.
  DetectorConfig detector_config() const {
    DetectorConfig det = detector;
    det.df = static_cast<int>(model.m_G());
    return det;
  }
};

/// u = kp (target - position) - kd velocity, with x = [position, velocity].
inline VectorXd pd_control(const VectorXd& x_hat, const VectorXd& target,
                           double kp, double kd) {
  const auto p = target.size();
  detail::require(x_hat.size() == 2 * p,
                  "pd_control: estimate must be [position; velocity]");
  return kp * (target - x_hat.head(p)) - kd * x_hat.tail(p);
}

struct StepRecord {
  long k = 0;
  VectorXd x;
  VectorXd x_hat;
  VectorXd u;
  double S = 0.0;
  Mode mode = Mode::Normal;
  bool alarmed = false;
  double trace_P = 0.0;
  double norm_P = 0.0;
  double conf_radius = 0.0;
  double err_norm = 0.0;
  VectorXd P_diag;
};

struct TraceSummary {
  std::optional<long> first_alarm_step;
  long false_alarms = 0;
  std::optional<long> escape_time;
  std::optional<double> escape_time_lower_bound;
  std::optional<long> escape_time_at_alarm;
  std::optional<double> stationary_trace_P;
  bool detectable_gps = false;
  std::optional<bool> detectable_drift_pair;
  std::optional<EscapeTimeReport> escape_report;
};

struct ScenarioTrace {
  std::vector<StepRecord> records;
  TraceSummary summary;
};

/// Scenario-independent quantities, computed once per model.
struct ScenarioAnalysis {
  std::optional<MatrixXd> stationary_P;
  std::optional<EscapeTimeReport> escape;
  bool detectable_gps = false;
  std::optional<bool> detectable_drift_pair;
};

inline ScenarioAnalysis analyze_scenario(const ScenarioConfig& config) {
  ScenarioAnalysis out;
  const auto& model = config.model;
  out.detectable_gps = is_detectable(model.C_G, model.A);
  if (Eigen::FullPivLU<MatrixXd>(model.A).isInvertible())
    out.detectable_drift_pair = drift_matrices(model).drift_pair_detectable;
  if (out.detectable_gps) {
    out.stationary_P = stationary_covariance(model);
    out.escape = escape_report(model, *out.stationary_P, config.zeta_norm,
                               config.detector.alpha,
                               static_cast<int>(model.n()));
  }
  return out;
}

struct RunOptions {
  /// Replaces the GPS reading passed to fuse (not the detector) at step k.
  std::function<VectorXd(long k, const VectorXd& y_G)> fuse_gps_override;
  /// Skip the stationary-P analysis in the summary.
  bool skip_analysis = false;
};

/// Per step: control, plant, measure, detect, decide mode, fuse, record.
inline ScenarioTrace run_scenario(const ScenarioConfig& config,
                                  const ScenarioAnalysis* analysis = nullptr,
                                  const RunOptions& options = {}) {
  config.validate();
  const SystemModel& model = config.model;
  const auto n = model.n();
  const auto stacked = StackedSensorForms::from(model);
  const GaussianSampler w_sampler(model.Sigma_w);
  const GaussianSampler g_sampler(model.Sigma_G);
  const GaussianSampler i_sampler(model.Sigma_I);
  NoiseStreams streams(config.seed);
  const double alpha = config.detector.alpha;
  const int df_state = static_cast<int>(n);
  const double chi2_state = chi2_quantile(df_state, alpha);

  ScenarioAnalysis local;
  if (!analysis && !options.skip_analysis) {
    local = analyze_scenario(config);
    analysis = &local;
  }

  ScenarioTrace trace;
  trace.records.reserve(static_cast<std::size_t>(config.steps));

  PlantState plant = PlantState::initial(config.x0);
  EstimatorState est = EstimatorState::initial(config.x0, MatrixXd::Zero(n, n));
  DetectorState det = DetectorState::initial(config.detector_config());

  auto record = [&](long k, const VectorXd& u) {
    StepRecord r;
    r.k = k;
    r.x = plant.x;
    r.x_hat = est.x_hat;
    r.u = u;
    r.S = det.S;
    r.mode = est.mode;
    r.alarmed = det.alarmed;
    r.trace_P = est.P.trace();
    r.norm_P = spectral_norm(est.P);
    r.conf_radius = std::sqrt(chi2_state * r.norm_P);
    r.err_norm = (plant.x - est.x_hat).norm();
    r.P_diag = est.P.diagonal();
    trace.records.push_back(std::move(r));
  };

  VectorXd u = pd_control(est.x_hat, config.target, config.kp, config.kd);
  record(0, u);

  for (long k = 1; k < config.steps; ++k) {
    try {
      plant = step_dynamics(model, plant, u, w_sampler(streams.process));
      const VectorXd y_G =
          measure_gps(model, plant, config.attack, g_sampler(streams.gps));
      const VectorXd y_I = measure_imu(model, plant, i_sampler(streams.imu));

      const Residual res = make_residual(residual(y_G, est.x_hat, u, model),
                                         residual_covariance(est.P, model));
      det = detector_step(det, res);
      est.mode = det.alarmed ? Mode::Emergency : Mode::Normal;

      const VectorXd y_G_fuse = options.fuse_gps_override
                                    ? options.fuse_gps_override(k, y_G)
                                    : y_G;
      est = fuse(est, model, stacked, u, y_G_fuse, y_I);
    } catch (const NumericalError& e) {
      throw NumericalError("step " + std::to_string(k) + ": " + e.what());
    }

    if (det.alarmed) {
      const bool attacked = config.attack.kind != AttackKind::None;
      if (!attacked || config.attack.active_at(k)) {
        if (!trace.summary.first_alarm_step) {
          trace.summary.first_alarm_step = k;
          try {
            trace.summary.escape_time_at_alarm =
                escape_time(est.P, model, Tolerance{config.zeta_norm}, alpha,
                            df_state);
          } catch (const HorizonExceeded&) {
          }
        }
      } else {
        ++trace.summary.false_alarms;
      }
    }

    u = pd_control(est.x_hat, config.target, config.kp, config.kd);
    record(k, u);
  }

  if (analysis) {
    trace.summary.detectable_gps = analysis->detectable_gps;
    trace.summary.detectable_drift_pair = analysis->detectable_drift_pair;
    if (analysis->stationary_P)
      trace.summary.stationary_trace_P = analysis->stationary_P->trace();
    if (analysis->escape) {
      trace.summary.escape_report = analysis->escape;
      trace.summary.escape_time = analysis->escape->k_escape;
      trace.summary.escape_time_lower_bound = analysis->escape->k_lower_bound;
    }
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Monte Carlo

/// Seed of run `i` in a batch with master seed `master`.
inline std::uint64_t run_seed(std::uint64_t master, long i) {
  return mix_seed(master ^ 0xa0761d6478bd642fULL, static_cast<std::uint64_t>(i));
}

struct RunSummary {
  std::uint64_t seed = 0;
  TraceSummary summary;
  double coverage = 0.0;  // fraction of steps with err_norm <= conf_radius
};

struct BatchSummary {
  std::vector<VectorXd> mean_error;   // per step, mean of x - x_hat
  std::vector<double> mean_err_norm;  // per step
  std::vector<double> coverage;       // per step, fraction of runs covered
  std::vector<RunSummary> runs;
  std::vector<ScenarioTrace> traces;  // only when kept
};

inline BatchSummary monte_carlo(const ScenarioConfig& config,
                                bool keep_traces = false,
                                unsigned threads = 0) {
  config.validate();
  const ScenarioAnalysis analysis = analyze_scenario(config);
  const auto runs = static_cast<std::size_t>(config.runs);
  std::vector<ScenarioTrace> traces(runs);
  std::vector<std::exception_ptr> errors(runs);

  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, runs));
  {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        for (std::size_t i = t; i < runs; i += threads) {
          try {
            ScenarioConfig cfg = config;
            cfg.seed = run_seed(config.seed, static_cast<long>(i));
            traces[i] = run_scenario(cfg, &analysis);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
  }
  for (std::size_t i = 0; i < runs; ++i) {
    if (!errors[i]) continue;
    try {
      std::rethrow_exception(errors[i]);
    } catch (const NumericalError& e) {
      throw NumericalError("run " + std::to_string(i) + ": " + e.what());
    }
  }

  BatchSummary out;
  const auto steps = static_cast<std::size_t>(config.steps);
  const auto n = config.model.n();
  out.mean_error.assign(steps, VectorXd::Zero(n));
  out.mean_err_norm.assign(steps, 0.0);
  out.coverage.assign(steps, 0.0);
  const double inv = 1.0 / static_cast<double>(runs);
  for (std::size_t i = 0; i < runs; ++i) {
    const auto& recs = traces[i].records;
    long covered = 0;
    for (std::size_t k = 0; k < steps; ++k) {
      const auto& r = recs[k];
      out.mean_error[k] += inv * (r.x - r.x_hat);
      out.mean_err_norm[k] += inv * r.err_norm;
      const bool in = r.err_norm <= r.conf_radius;
      out.coverage[k] += in ? inv : 0.0;
      covered += in ? 1 : 0;
    }
    out.runs.push_back({run_seed(config.seed, static_cast<long>(i)),
                        traces[i].summary,
                        static_cast<double>(covered) / static_cast<double>(steps)});
  }
  if (keep_traces) out.traces = std::move(traces);
  return out;
}

// ---------------------------------------------------------------------------
// Configuration

namespace detail {

using nlohmann::json;

inline MatrixXd matrix_from_json(const json& j, const std::string& key) {
  if (!j.is_array() || j.empty())
    throw ConfigError(key, "expected a non-empty array of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  Eigen::Index cols = -1;
  MatrixXd m;
  for (Eigen::Index r = 0; r < rows; ++r) {
    const json& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array())
      throw ConfigError(key, "row " + std::to_string(r) + " is not an array");
    if (cols < 0) {
      cols = static_cast<Eigen::Index>(row.size());
      m.resize(rows, cols);
    } else if (static_cast<Eigen::Index>(row.size()) != cols) {
      throw ConfigError(key, "ragged matrix: row " + std::to_string(r) +
                                 " has " + std::to_string(row.size()) +
                                 " entries, expected " + std::to_string(cols));
    }
    for (Eigen::Index c = 0; c < cols; ++c) {
      const json& v = row[static_cast<std::size_t>(c)];
      if (!v.is_number())
        throw ConfigError(key, "entry (" + std::to_string(r) + "," +
                                   std::to_string(c) + ") is not a number");
      m(r, c) = v.get<double>();
    }
  }
  return m;
}

inline VectorXd vector_from_json(const json& j, const std::string& key) {
  if (!j.is_array()) throw ConfigError(key, "expected an array of numbers");
  VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number())
      throw ConfigError(key, "entry " + std::to_string(i) + " is not a number");
    v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  }
  return v;
}

inline void reject_unknown(const json& obj, const std::string& prefix,
                           std::initializer_list<const char*> allowed) {
  if (!obj.is_object())
    throw ConfigError(prefix.empty() ? "<root>" : prefix, "expected an object");
  for (const auto& [key, value] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok)
      throw ConfigError(prefix.empty() ? key : prefix + "." + key,
                        "unknown key");
  }
}

inline double number(const json& j, const std::string& key) {
  if (!j.is_number()) throw ConfigError(key, "expected a number");
  return j.get<double>();
}

inline long integer(const json& j, const std::string& key) {
  if (!j.is_number_integer()) throw ConfigError(key, "expected an integer");
  return j.get<long>();
}

inline AttackKind attack_kind(const std::string& s, const std::string& key) {
  if (s == "none") return AttackKind::None;
  if (s == "constant-bias") return AttackKind::ConstantBias;
  if (s == "ramp") return AttackKind::Ramp;
  if (s == "custom-sequence") return AttackKind::CustomSequence;
  throw ConfigError(key, "unknown attack kind '" + s +
                             "' (expected none, constant-bias, ramp or "
                             "custom-sequence)");
}

}  // namespace detail

/// Parses the JSON scenario schema. Missing keys keep the defaults of
/// ScenarioConfig; unknown keys are rejected.
inline ScenarioConfig parse_config_json(const nlohmann::json& root) {
  using detail::integer;
  using detail::number;
  detail::reject_unknown(root, "",
                         {"model", "x0", "target", "controller", "attack",
                          "detector", "steps", "seed", "zeta_norm", "runs"});
  ScenarioConfig cfg;
  if (root.contains("model")) {
    const auto& m = root["model"];
    detail::reject_unknown(
        m, "model", {"A", "B", "C_G", "C_I", "Sigma_w", "Sigma_G", "Sigma_I"});
    auto load = [&](const char* key, MatrixXd& dst) {
      if (m.contains(key))
        dst = detail::matrix_from_json(m[key], std::string("model.") + key);
    };
    load("A", cfg.model.A);
    load("B", cfg.model.B);
    load("C_G", cfg.model.C_G);
    load("C_I", cfg.model.C_I);
    load("Sigma_w", cfg.model.Sigma_w);
    load("Sigma_G", cfg.model.Sigma_G);
    load("Sigma_I", cfg.model.Sigma_I);
  }
  if (const auto findings = validate_model(cfg.model); !findings.empty())
    throw ConfigError("model", findings.front());
  const auto n = cfg.model.n();

  if (root.contains("x0")) cfg.x0 = detail::vector_from_json(root["x0"], "x0");
  else cfg.x0 = VectorXd::Zero(n);
  if (cfg.x0.size() != n)
    throw ConfigError("x0", "has dimension " + std::to_string(cfg.x0.size()) +
                                ", expected " + std::to_string(n));
  if (root.contains("target"))
    cfg.target = detail::vector_from_json(root["target"], "target");
  if (cfg.target.size() != cfg.model.p())
    throw ConfigError("target", "has dimension " +
                                    std::to_string(cfg.target.size()) +
                                    ", expected " +
                                    std::to_string(cfg.model.p()));
  if (n != 2 * cfg.model.p())
    throw ConfigError("model.B",
                      "PD control needs state = [position, velocity], n = 2p");

  if (root.contains("controller")) {
    const auto& c = root["controller"];
    detail::reject_unknown(c, "controller", {"kp", "kd"});
    if (c.contains("kp")) cfg.kp = number(c["kp"], "controller.kp");
    if (c.contains("kd")) cfg.kd = number(c["kd"], "controller.kd");
  }
  if (!(cfg.kp > 0.0)) throw ConfigError("controller.kp", "must be positive");
  if (!(cfg.kd > 0.0)) throw ConfigError("controller.kd", "must be positive");

  if (root.contains("attack")) {
    const auto& a = root["attack"];
    detail::reject_unknown(a, "attack", {"kind", "d", "start_step", "sequence"});
    if (a.contains("kind")) {
      if (!a["kind"].is_string())
        throw ConfigError("attack.kind", "expected a string");
      cfg.attack.kind = detail::attack_kind(a["kind"].get<std::string>(),
                                            "attack.kind");
    }
    if (a.contains("d")) cfg.attack.d = detail::vector_from_json(a["d"], "attack.d");
    if (a.contains("start_step"))
      cfg.attack.start_step = integer(a["start_step"], "attack.start_step");
    if (a.contains("sequence")) {
      const auto& s = a["sequence"];
      if (!s.is_array()) throw ConfigError("attack.sequence", "expected an array");
      cfg.attack.sequence.clear();
      for (std::size_t i = 0; i < s.size(); ++i) {
        const std::string key = "attack.sequence[" + std::to_string(i) + "]";
        VectorXd v = detail::vector_from_json(s[i], key);
        if (v.size() != cfg.model.m_G())
          throw ConfigError(key, "has dimension " + std::to_string(v.size()) +
                                     ", expected " +
                                     std::to_string(cfg.model.m_G()));
        cfg.attack.sequence.push_back(std::move(v));
      }
    }
  }
  if (cfg.attack.start_step < 0)
    throw ConfigError("attack.start_step", "must be >= 0");
  if ((cfg.attack.kind == AttackKind::ConstantBias ||
       cfg.attack.kind == AttackKind::Ramp) &&
      cfg.attack.d.size() != cfg.model.m_G())
    throw ConfigError("attack.d", "has dimension " +
                                      std::to_string(cfg.attack.d.size()) +
                                      ", expected " +
                                      std::to_string(cfg.model.m_G()));

  if (root.contains("detector")) {
    const auto& d = root["detector"];
    detail::reject_unknown(d, "detector", {"alpha", "delta", "enabled"});
    if (d.contains("alpha")) cfg.detector.alpha = number(d["alpha"], "detector.alpha");
    if (d.contains("delta")) cfg.detector.delta = number(d["delta"], "detector.delta");
    if (d.contains("enabled")) {
      if (!d["enabled"].is_boolean())
        throw ConfigError("detector.enabled", "expected a boolean");
      cfg.detector.enabled = d["enabled"].get<bool>();
    }
  }
  if (!(cfg.detector.alpha > 0.0 && cfg.detector.alpha < 1.0))
    throw ConfigError("detector.alpha", "significance level must lie in (0, 1)");
  if (!(cfg.detector.delta > 0.0 && cfg.detector.delta < 1.0))
    throw ConfigError("detector.delta", "forgetting factor must lie in (0, 1)");
  cfg.detector.df = static_cast<int>(cfg.model.m_G());

  if (root.contains("steps")) cfg.steps = integer(root["steps"], "steps");
  if (cfg.steps < 1) throw ConfigError("steps", "must be >= 1");
  if (root.contains("runs")) cfg.runs = integer(root["runs"], "runs");
  if (cfg.runs < 1) throw ConfigError("runs", "must be >= 1");
  if (root.contains("seed")) {
    const auto& s = root["seed"];
    if (!s.is_number_integer() || (s.is_number_integer() && !s.is_number_unsigned() && s.get<long long>() < 0))
      throw ConfigError("seed", "expected a nonnegative 64-bit integer");
    cfg.seed = s.get<std::uint64_t>();
  }
  if (root.contains("zeta_norm"))
    cfg.zeta_norm = number(root["zeta_norm"], "zeta_norm");
  if (!(cfg.zeta_norm > 0.0)) throw ConfigError("zeta_norm", "must be positive");
  return cfg;
}

inline ScenarioConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot open config file '" + path + "'");
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("", "malformed JSON in '" + path + "': " + e.what());
  }
  return parse_config_json(root);
}

// ---------------------------------------------------------------------------
// Export

namespace detail {

inline std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <class T>
nlohmann::json optional_json(const std::optional<T>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

template <class T>
std::optional<T> optional_from(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return j[key].get<T>();
}

inline nlohmann::json matrix_json(const MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline nlohmann::json vector_json(const VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

}  // namespace detail

inline std::string csv_header(Eigen::Index n, Eigen::Index p) {
  std::string h = "k";
  for (Eigen::Index i = 1; i <= n; ++i) h += ",x" + std::to_string(i);
  for (Eigen::Index i = 1; i <= n; ++i) h += ",xhat" + std::to_string(i);
  for (Eigen::Index i = 1; i <= p; ++i) h += ",u" + std::to_string(i);
  h += ",S,mode,alarmed,trace_P,norm_P,conf_radius,err_norm";
  return h;
}

inline std::string trace_to_csv(const ScenarioTrace& trace) {
  if (trace.records.empty()) return csv_header(0, 0) + "\n";
  const auto& first = trace.records.front();
  std::string out = csv_header(first.x.size(), first.u.size()) + "\n";
  for (const auto& r : trace.records) {
    out += std::to_string(r.k);
    for (Eigen::Index i = 0; i < r.x.size(); ++i) out += "," + detail::fmt17(r.x(i));
    for (Eigen::Index i = 0; i < r.x_hat.size(); ++i)
      out += "," + detail::fmt17(r.x_hat(i));
    for (Eigen::Index i = 0; i < r.u.size(); ++i) out += "," + detail::fmt17(r.u(i));
    out += "," + detail::fmt17(r.S);
    out += std::string(",") + to_string(r.mode);
    out += r.alarmed ? ",1" : ",0";
    out += "," + detail::fmt17(r.trace_P);
    out += "," + detail::fmt17(r.norm_P);
    out += "," + detail::fmt17(r.conf_radius);
    out += "," + detail::fmt17(r.err_norm);
    out += "\n";
  }
  return out;
}

inline nlohmann::json escape_report_json(const EscapeTimeReport& rep) {
  return {{"k_escape", detail::optional_json(rep.k_escape)},
          {"k_lower_bound", detail::optional_json(rep.k_lower_bound)},
          {"k_lower_bound_ceil",
           rep.k_lower_bound && std::isfinite(*rep.k_lower_bound)
               ? nlohmann::json(static_cast<long>(std::ceil(*rep.k_lower_bound)))
               : nlohmann::json(nullptr)},
          {"zeta_norm", rep.zeta_norm},
          {"alpha", rep.alpha},
          {"df", rep.df},
          {"stationary_P", detail::matrix_json(rep.stationary_P)},
          {"norm_A", rep.norm_A},
          {"branch", to_string(rep.branch)}};
}

inline nlohmann::json summary_json(const TraceSummary& s) {
  nlohmann::json j = {
      {"first_alarm_step", detail::optional_json(s.first_alarm_step)},
      {"escape_time", detail::optional_json(s.escape_time)},
      {"escape_time_lower_bound", detail::optional_json(s.escape_time_lower_bound)},
      {"stationary_trace_P", detail::optional_json(s.stationary_trace_P)},
      {"detectable_gps", s.detectable_gps},
      {"detectable_drift_pair", detail::optional_json(s.detectable_drift_pair)},
      {"false_alarms", s.false_alarms},
      {"escape_time_at_alarm", detail::optional_json(s.escape_time_at_alarm)}};
  j["escape_report"] =
      s.escape_report ? escape_report_json(*s.escape_report) : nlohmann::json(nullptr);
  return j;
}

/// Reads back the scalar summary fields written by summary_json.
inline TraceSummary summary_from_json(const nlohmann::json& j) {
  TraceSummary s;
  s.first_alarm_step = detail::optional_from<long>(j, "first_alarm_step");
  s.escape_time = detail::optional_from<long>(j, "escape_time");
  s.escape_time_lower_bound =
      detail::optional_from<double>(j, "escape_time_lower_bound");
  s.stationary_trace_P = detail::optional_from<double>(j, "stationary_trace_P");
  s.detectable_gps = j.at("detectable_gps").get<bool>();
  s.detectable_drift_pair = detail::optional_from<bool>(j, "detectable_drift_pair");
  s.false_alarms = j.value("false_alarms", 0L);
  s.escape_time_at_alarm = detail::optional_from<long>(j, "escape_time_at_alarm");
  return s;
}

inline nlohmann::json trace_json(const ScenarioTrace& trace) {
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& r : trace.records) {
    recs.push_back({{"k", r.k},
                    {"x", detail::vector_json(r.x)},
                    {"x_hat", detail::vector_json(r.x_hat)},
                    {"u", detail::vector_json(r.u)},
                    {"S", r.S},
                    {"mode", to_string(r.mode)},
                    {"alarmed", r.alarmed},
                    {"trace_P", r.trace_P},
                    {"norm_P", r.norm_P},
                    {"conf_radius", r.conf_radius},
                    {"err_norm", r.err_norm}});
  }
  return {{"summary", summary_json(trace.summary)}, {"records", std::move(recs)}};
}

enum class TraceFormat { Csv, Json };

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << text;
  out.flush();
  if (!out) throw IoError("write failed for '" + path + "'");
}

inline void export_trace(const ScenarioTrace& trace, const std::string& path,
                         TraceFormat format) {
  write_text(path, format == TraceFormat::Csv ? trace_to_csv(trace)
                                              : trace_json(trace).dump(2) + "\n");
}

inline TraceSummary read_summary(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  const auto j = nlohmann::json::parse(in);
  return summary_from_json(j.contains("summary") ? j["summary"] : j);
}

}  // namespace resest
