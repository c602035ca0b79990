// Command-line front end: run, mc, analyze, validate.
//
// Exit codes: 0 success, 1 configuration or I/O error, 2 numerical failure.

#include <cmath>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "resest/resest.hpp"

namespace {

using nlohmann::json;
using namespace resest;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<long> steps;
  std::optional<long> runs;
  std::string out;
  std::string format = "csv";
};

ScenarioConfig load(const Common& c) {
  ScenarioConfig cfg = c.config.empty() ? parse_config_json(json::object())
                                        : parse_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (c.steps) {
    if (*c.steps < 1) throw ConfigError("--steps", "must be >= 1");
    cfg.steps = *c.steps;
  }
  if (c.runs) {
    if (*c.runs < 1) throw ConfigError("--runs", "must be >= 1");
    cfg.runs = *c.runs;
  }
  return cfg;
}

TraceFormat format_of(const std::string& s) {
  if (s == "csv") return TraceFormat::Csv;
  if (s == "json") return TraceFormat::Json;
  throw ConfigError("--format", "expected csv or json");
}

int cmd_run(const Common& c) {
  const ScenarioConfig cfg = load(c);
  const auto fmt = format_of(c.format);
  const ScenarioTrace trace = run_scenario(cfg);
  if (!c.out.empty()) export_trace(trace, c.out, fmt);
  std::cout << summary_json(trace.summary).dump(2) << "\n";
  return 0;
}

int cmd_mc(const Common& c) {
  const ScenarioConfig cfg = load(c);
  const auto fmt = format_of(c.format);
  const BatchSummary batch = monte_carlo(cfg);

  json runs = json::array();
  double covered = 0.0;
  for (const auto& r : batch.runs) {
    runs.push_back({{"seed", r.seed},
                    {"coverage", r.coverage},
                    {"summary", summary_json(r.summary)}});
    covered += r.coverage;
  }
  json out = {{"runs", cfg.runs},
              {"steps", cfg.steps},
              {"mean_coverage", covered / static_cast<double>(batch.runs.size())},
              {"per_run", runs}};

  if (!c.out.empty()) {
    if (fmt == TraceFormat::Csv) {
      const auto n = cfg.model.n();
      std::string text = "k";
      for (Eigen::Index i = 1; i <= n; ++i) text += ",mean_err" + std::to_string(i);
      text += ",mean_err_norm,coverage\n";
      for (std::size_t k = 0; k < batch.coverage.size(); ++k) {
        text += std::to_string(k);
        for (Eigen::Index i = 0; i < n; ++i)
          text += "," + detail::fmt17(batch.mean_error[k](i));
        text += "," + detail::fmt17(batch.mean_err_norm[k]);
        text += "," + detail::fmt17(batch.coverage[k]) + "\n";
      }
      write_text(c.out, text);
    } else {
      json full = out;
      full["coverage"] = batch.coverage;
      full["mean_err_norm"] = batch.mean_err_norm;
      write_text(c.out, full.dump(2) + "\n");
    }
  }
  out.erase("per_run");
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_analyze(const Common& c) {
  const ScenarioConfig cfg = load(c);
  const auto& model = cfg.model;
  json report;
  report["detectable_gps"] = is_detectable(model.C_G, model.A);
  report["norm_A"] = spectral_norm(model.A);
  report["emergency_gain"] = detail::matrix_json(emergency_gain(model));
  report["sigma_bar"] = detail::matrix_json(emergency_noise(model));
  if (Eigen::FullPivLU<MatrixXd>(model.A).isInvertible()) {
    const DriftAnalysis d = drift_matrices(model);
    report["detectable_drift_pair"] = d.drift_pair_detectable;
    report["C_bar_I"] = detail::matrix_json(d.C_bar_I);
    report["L"] = detail::matrix_json(d.L);
    report["A_bar"] = detail::matrix_json(d.A_bar);
    report["decoupling_residual"] =
        spectral_norm(decoupling_residual(model, d));
  } else {
    report["detectable_drift_pair"] = nullptr;
  }
  if (report["detectable_gps"].get<bool>()) {
    const MatrixXd P = stationary_covariance(model);
    const int df = static_cast<int>(model.n());
    report["stationary_trace_P"] = P.trace();
    report["escape_report"] =
        escape_report_json(escape_report(model, P, cfg.zeta_norm,
                                         cfg.detector.alpha, df));
    report["confidence_radius_stationary"] =
        confidence_bound(P, cfg.detector.alpha, df);
  }
  report["detector_threshold"] =
      chi2_quantile(static_cast<int>(model.m_G()), cfg.detector.alpha) /
      (1.0 - cfg.detector.delta);
  std::cout << report.dump(2) << "\n";
  return 0;
}

int cmd_validate(const Common& c) {
  const ScenarioConfig cfg = load(c);
  cfg.validate();
  std::cout << "ok: n=" << cfg.model.n() << " p=" << cfg.model.p()
            << " m_G=" << cfg.model.m_G() << " m_I=" << cfg.model.m_I()
            << " steps=" << cfg.steps << " runs=" << cfg.runs << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Resilient GPS/IMU estimation: simulation and escape-time analysis"};
  app.require_subcommand(1);
  Common common;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "Scenario JSON file");
    sub->add_option("--seed", common.seed, "Master seed (overrides config)");
    sub->add_option("--steps", common.steps, "Horizon (overrides config)");
    sub->add_option("--runs", common.runs, "Monte Carlo runs (overrides config)");
    sub->add_option("--out", common.out, "Output file");
    sub->add_option("--format", common.format, "csv or json")
        ->check(CLI::IsMember({"csv", "json"}));
  };
  auto* run = app.add_subcommand("run", "Simulate one scenario");
  auto* mc = app.add_subcommand("mc", "Monte Carlo batch");
  auto* analyze = app.add_subcommand("analyze", "Escape time and detectability report");
  auto* validate = app.add_subcommand("validate", "Lint a config file");
  for (auto* sub : {run, mc, analyze, validate}) add_common(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*run) return cmd_run(common);
    if (*mc) return cmd_mc(common);
    if (*analyze) return cmd_analyze(common);
    if (*validate) return cmd_validate(common);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const InvalidInput& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return 1;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 1;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
