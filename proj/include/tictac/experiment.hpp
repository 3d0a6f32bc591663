#pragma once

// Multi-trial experiment orchestration and result files.
//
// A trial is one fresh realization of the data (a new random multivariate
// distribution, a new random UCI feature split, or a new univariate draw).
// Every requested method is trained on that realization with the same seed,
// hence the same initial networks and the same batch schedule.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <exception>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "tictac/csv.hpp"
#include "tictac/data.hpp"
#include "tictac/error.hpp"
#include "tictac/method.hpp"
#include "tictac/metrics.hpp"
#include "tictac/trainer.hpp"

namespace tictac {

enum class ExperimentKind { Univariate, Multivariate, Uci };

inline const char* to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::Univariate: return "univariate";
    case ExperimentKind::Multivariate: return "multivariate";
    case ExperimentKind::Uci: return "uci";
  }
  return "?";
}

inline ExperimentKind experiment_kind_from_string(const std::string& s) {
  if (s == "univariate") return ExperimentKind::Univariate;
  if (s == "multivariate") return ExperimentKind::Multivariate;
  if (s == "uci") return ExperimentKind::Uci;
  throw Error(ErrorCode::InvalidArgument, "unknown experiment '" + s + "'");
}

struct ExperimentSpec {
  ExperimentKind kind = ExperimentKind::Multivariate;
  std::vector<Method> methods;
  std::size_t trials = 1;
  std::uint64_t seed = 0;

  UnivariateVariant variant = UnivariateVariant::Const5;
  std::size_t samples = 0;            // 0: 10000 univariate, 1000 * d multivariate
  std::vector<std::size_t> dims{4};   // multivariate sweep
  std::vector<UciSchema> uci;         // one entry per dataset

  TrainConfig train;                  // method and seed are set per run
  std::optional<std::size_t> batch_size;  // default 256 synthetic, 64 UCI
  std::size_t jobs = 1;               // trials run concurrently
  std::size_t curve_points = 1001;    // univariate evaluation grid
  bool record_timing = false;         // wall_time_s in results.csv
  std::ostream* log = nullptr;        // warnings and progress

  void validate() const {
    if (methods.empty()) throw Error(ErrorCode::InvalidArgument, "no methods requested");
    if (trials < 1) throw Error(ErrorCode::InvalidArgument, "trials must be >= 1");
    if (jobs < 1) throw Error(ErrorCode::InvalidArgument, "jobs must be >= 1");
    if (kind == ExperimentKind::Multivariate) {
      if (dims.empty()) throw Error(ErrorCode::InvalidArgument, "no dimensions requested");
      for (std::size_t d : dims)
        if (d < 4 || d > 20 || d % 2) throw Error(ErrorCode::InvalidArgument, "d must be even and in [4, 20]");
    }
    if (kind == ExperimentKind::Uci && uci.empty()) throw Error(ErrorCode::InvalidArgument, "no UCI csv given");
    if (curve_points < 2) throw Error(ErrorCode::InvalidArgument, "curve_points must be >= 2");
    TrainConfig t = train;
    if (batch_size) t.batch_size = *batch_size;
    t.validate();
  }
};

/// Variance-calibration statistics for single-target runs.
struct UnivariateCalibration {
  double std_abs_x_correlation = 0.0;  // Pearson(predicted std, |x|) on the grid
  double mean_rmse = 0.0;              // predicted mean vs noiseless signal
};

struct UnivariateCurve {
  Vector x;
  Vector signal;    // noiseless A(x) sin(2 pi x)
  Vector true_std;  // |x|
  std::map<std::string, std::pair<Vector, Vector>> predicted;  // method -> (mean, std)
};

struct TrialResult {
  std::string method;
  std::string dataset;
  std::size_t dim = 0;  // target dimension
  std::size_t trial = 0;
  std::uint64_t seed = 0;
  std::optional<double> tac;
  double mse = 0.0;
  double mean_nll = 0.0;
  double wall_time_s = 0.0;
  std::optional<UnivariateCalibration> calibration;
};

struct TrialFailure {
  std::string method;
  std::string dataset;
  std::size_t dim = 0;
  std::size_t trial = 0;
  std::string message;
};

struct TrialArtifacts {
  std::string dataset;
  std::size_t dim = 0;
  std::size_t trial = 0;
  std::uint64_t seed = 0;
  std::map<std::string, std::vector<double>> loss_traces;
  std::optional<UnivariateCurve> curve;
  nlohmann::json dataset_params;
};

struct ExperimentOutcome {
  std::vector<TrialResult> rows;
  std::vector<TrialFailure> failures;
  std::vector<TrialArtifacts> artifacts;
};

inline double pearson(std::span<const double> a, std::span<const double> b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

/// Seed of trial `t`; also the dataset realization seed of that trial.
inline std::uint64_t trial_seed(std::uint64_t seed, std::size_t t) { return derive_seed(seed, 1000 + t); }

namespace detail {

struct TrialUnit {
  std::size_t trial = 0;
  std::size_t dim = 0;          // multivariate d
  std::size_t uci_index = 0;
};

inline UnivariateCurve make_curve(UnivariateVariant v, std::size_t points) {
  UnivariateCurve c;
  for (std::size_t i = 0; i < points; ++i) {
    const double x = kUnivariateXMin + (kUnivariateXMax - kUnivariateXMin) * static_cast<double>(i) /
                                           static_cast<double>(points - 1);
    c.x.push_back(x);
    c.signal.push_back(univariate_signal(v, x));
    c.true_std.push_back(std::abs(x));
  }
  return c;
}

inline UnivariateCalibration calibrate(UnivariateCurve& curve, const std::string& method_label, const Mlp& mean_net,
                                       const Method& method, const Mlp* cov_net) {
  Vector mean(curve.x.size()), sd(curve.x.size());
  double se = 0.0;
  for (std::size_t i = 0; i < curve.x.size(); ++i) {
    const double x[1] = {curve.x[i]};
    const SamplePrediction p = predict_sample(mean_net, method, cov_net, x);
    mean[i] = p.mean[0];
    sd[i] = std::sqrt(p.cov(0, 0));
    se += (mean[i] - curve.signal[i]) * (mean[i] - curve.signal[i]);
  }
  UnivariateCalibration cal;
  cal.std_abs_x_correlation = pearson(sd, curve.true_std);
  cal.mean_rmse = std::sqrt(se / static_cast<double>(curve.x.size()));
  curve.predicted[method_label] = {std::move(mean), std::move(sd)};
  return cal;
}

}  // namespace detail

/// Runs every (realization, trial) unit with every method. Failed
/// method runs are recorded in `failures` and left out of `rows`.
inline ExperimentOutcome run_trials(const ExperimentSpec& spec) {
  spec.validate();
  std::vector<Table> tables;
  for (const auto& schema : spec.uci) tables.push_back(load_uci(schema));

  std::vector<detail::TrialUnit> units;
  if (spec.kind == ExperimentKind::Multivariate) {
    for (std::size_t d : spec.dims)
      for (std::size_t t = 0; t < spec.trials; ++t) units.push_back({t, d, 0});
  } else if (spec.kind == ExperimentKind::Uci) {
    for (std::size_t u = 0; u < tables.size(); ++u)
      for (std::size_t t = 0; t < spec.trials; ++t) units.push_back({t, 0, u});
  } else {
    for (std::size_t t = 0; t < spec.trials; ++t) units.push_back({t, 1, 0});
  }

  struct UnitOutcome {
    std::vector<TrialResult> rows;
    std::vector<TrialFailure> failures;
    TrialArtifacts artifacts;
  };
  std::vector<UnitOutcome> results(units.size());
  std::mutex log_mutex;
  auto log = [&](const std::string& line) {
    if (!spec.log) return;
    std::lock_guard<std::mutex> lock(log_mutex);
    *spec.log << line << '\n';
  };

  auto run_unit = [&](std::size_t u) {
    const detail::TrialUnit& unit = units[u];
    const std::uint64_t seed = trial_seed(spec.seed, unit.trial);
    Dataset data;
    switch (spec.kind) {
      case ExperimentKind::Univariate:
        data = gen_univariate(spec.variant, spec.samples ? spec.samples : 10000, seed);
        break;
      case ExperimentKind::Multivariate: {
        MultivariateOptions opt;
        opt.samples = spec.samples;
        data = gen_multivariate(unit.dim, seed, opt).first;
        break;
      }
      case ExperimentKind::Uci:
        data = random_feature_split(tables[unit.uci_index], seed);
        break;
    }
    TrainConfig base = spec.train;
    base.seed = seed;
    base.batch_size = spec.batch_size ? *spec.batch_size : (spec.kind == ExperimentKind::Uci ? 64 : 256);
    const BatchSchedule schedule =
        make_batch_schedule(data.size(), base.batch_size, base.epochs, derive_seed(seed, kBatchStream));

    UnitOutcome& out = results[u];
    out.artifacts.dataset = data.name;
    out.artifacts.dim = data.target_dim();
    out.artifacts.trial = unit.trial;
    out.artifacts.seed = seed;
    out.artifacts.dataset_params = data.params;
    if (spec.kind == ExperimentKind::Univariate) out.artifacts.curve = detail::make_curve(spec.variant, spec.curve_points);

    for (const Method& method : spec.methods) {
      TrainConfig cfg = base;
      cfg.method = method;
      const auto t0 = std::chrono::steady_clock::now();
      try {
        TrainedPair tp = train(cfg, data, schedule);
        const Mlp* cov = tp.cov_net ? &*tp.cov_net : nullptr;
        MetricReport rep = evaluate(data, tp.mean_net, method, cov);
        TrialResult row;
        row.method = method_name(method);
        row.dataset = data.name;
        row.dim = data.target_dim();
        row.trial = unit.trial;
        row.seed = seed;
        row.tac = rep.tac;
        row.mse = rep.mse;
        row.mean_nll = rep.mean_nll;
        if (out.artifacts.curve)
          row.calibration = detail::calibrate(*out.artifacts.curve, row.method, tp.mean_net, method, cov);
        row.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        out.artifacts.loss_traces[row.method] = std::move(tp.loss_trace);
        log("event=trial method=" + row.method + " dataset=" + row.dataset + " trial=" + std::to_string(unit.trial) +
            " tac=" + (row.tac ? csv::format_number(*row.tac) : std::string("NA")) +
            " mse=" + csv::format_number(row.mse));
        out.rows.push_back(std::move(row));
      } catch (const Error& e) {
        out.failures.push_back({method_name(method), data.name, data.target_dim(), unit.trial, e.what()});
        log("event=warning trial_failed method=" + method_name(method) + " dataset=" + data.name +
            " trial=" + std::to_string(unit.trial) + " reason=\"" + e.what() + "\"");
      }
    }
  };

  if (spec.jobs <= 1 || units.size() <= 1) {
    for (std::size_t u = 0; u < units.size(); ++u) run_unit(u);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    std::mutex error_mutex;
    std::exception_ptr first_error;
    for (std::size_t w = 0; w < std::min(spec.jobs, units.size()); ++w)
      pool.emplace_back([&] {
        for (std::size_t u = next++; u < units.size(); u = next++) {
          try {
            run_unit(u);
          } catch (...) {
            std::lock_guard<std::mutex> lock(error_mutex);
            if (!first_error) first_error = std::current_exception();
          }
        }
      });
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
  }

  ExperimentOutcome outcome;
  for (auto& r : results) {
    for (auto& row : r.rows) outcome.rows.push_back(std::move(row));
    for (auto& f : r.failures) outcome.failures.push_back(std::move(f));
    outcome.artifacts.push_back(std::move(r.artifacts));
  }
  return outcome;
}

/// Mean over trials per (method, dataset, dim).
struct AggregateRow {
  std::string method;
  std::string dataset;
  std::size_t dim = 0;
  std::size_t trials = 0;
  std::optional<double> tac;
  double mse = 0.0;
  double mean_nll = 0.0;
  std::optional<double> std_abs_x_correlation;
  std::optional<double> mean_rmse;
};

inline std::vector<AggregateRow> aggregate(const std::vector<TrialResult>& rows) {
  std::vector<AggregateRow> out;
  auto find = [&](const TrialResult& r) -> AggregateRow& {
    for (auto& a : out)
      if (a.method == r.method && a.dataset == r.dataset && a.dim == r.dim) return a;
    out.push_back({r.method, r.dataset, r.dim});
    return out.back();
  };
  for (const auto& r : rows) {
    AggregateRow& a = find(r);
    ++a.trials;
    if (r.tac) a.tac = a.tac.value_or(0.0) + *r.tac;
    a.mse += r.mse;
    a.mean_nll += r.mean_nll;
    if (r.calibration) {
      a.std_abs_x_correlation = a.std_abs_x_correlation.value_or(0.0) + r.calibration->std_abs_x_correlation;
      a.mean_rmse = a.mean_rmse.value_or(0.0) + r.calibration->mean_rmse;
    }
  }
  for (auto& a : out) {
    const double k = static_cast<double>(a.trials);
    if (a.tac) *a.tac /= k;
    a.mse /= k;
    a.mean_nll /= k;
    if (a.std_abs_x_correlation) *a.std_abs_x_correlation /= k;
    if (a.mean_rmse) *a.mean_rmse /= k;
  }
  return out;
}

inline constexpr const char* kResultsHeader = "method,dataset,dim,trial,seed,tac,mse,mean_nll,wall_time_s";

/// results.csv; `tac` is left empty when undefined (single target).
inline void write_results_csv(std::ostream& os, const std::vector<TrialResult>& rows, bool record_timing) {
  os << kResultsHeader << '\n';
  for (const auto& r : rows) {
    os << r.method << ',' << r.dataset << ',' << r.dim << ',' << r.trial << ',' << r.seed << ','
       << (r.tac ? csv::format_number(*r.tac) : std::string()) << ',' << csv::format_number(r.mse) << ','
       << csv::format_number(r.mean_nll) << ',' << csv::format_number(record_timing ? r.wall_time_s : 0.0) << '\n';
  }
}

/// TAC against target dimension, one line per (method, dim): the series a
/// dimension-sweep plot needs.
inline void write_tac_series_csv(std::ostream& os, const std::vector<AggregateRow>& agg) {
  os << "method,dim,mean_tac,trials\n";
  for (const auto& a : agg)
    if (a.tac) os << a.method << ',' << a.dim << ',' << csv::format_number(*a.tac) << ',' << a.trials << '\n';
}

inline nlohmann::json to_json(const TrialResult& r) {
  nlohmann::json j = {{"method", r.method}, {"dataset", r.dataset}, {"dim", r.dim},           {"trial", r.trial},
                      {"seed", r.seed},     {"mse", r.mse},         {"mean_nll", r.mean_nll}, {"wall_time_s", r.wall_time_s}};
  j["tac"] = r.tac ? nlohmann::json(*r.tac) : nlohmann::json(nullptr);
  if (r.calibration)
    j["calibration"] = {{"std_abs_x_correlation", r.calibration->std_abs_x_correlation},
                        {"mean_rmse", r.calibration->mean_rmse}};
  return j;
}

inline nlohmann::json to_json(const AggregateRow& a) {
  nlohmann::json j = {{"method", a.method}, {"dataset", a.dataset}, {"dim", a.dim},
                      {"trials", a.trials}, {"mse", a.mse},         {"mean_nll", a.mean_nll}};
  j["tac"] = a.tac ? nlohmann::json(*a.tac) : nlohmann::json(nullptr);
  if (a.std_abs_x_correlation) j["std_abs_x_correlation"] = *a.std_abs_x_correlation;
  if (a.mean_rmse) j["mean_rmse"] = *a.mean_rmse;
  return j;
}

/// {config, aggregates, trials, failures, execution}. Timing lives under
/// "trials[].wall_time_s" regardless of whether results.csv records it.
inline nlohmann::json results_json(const nlohmann::json& config, const ExperimentOutcome& outcome,
                                   const ExperimentSpec& spec) {
  nlohmann::json j;
  j["config"] = config;
  j["aggregates"] = nlohmann::json::array();
  for (const auto& a : aggregate(outcome.rows)) j["aggregates"].push_back(to_json(a));
  j["trials"] = nlohmann::json::array();
  for (const auto& r : outcome.rows) j["trials"].push_back(to_json(r));
  j["failures"] = nlohmann::json::array();
  for (const auto& f : outcome.failures)
    j["failures"].push_back(
        {{"method", f.method}, {"dataset", f.dataset}, {"dim", f.dim}, {"trial", f.trial}, {"message", f.message}});
  j["execution"] = {{"jobs", spec.jobs},
                    {"threads_per_trial", spec.train.threads},
                    {"bitwise_deterministic", spec.train.threads == 1}};
  return j;
}

/// Per-trial artifacts under `dir/trials/<dataset>_trial<k>/`: loss traces
/// and, for univariate runs, the evaluation curve.
inline void write_trial_artifacts(const std::filesystem::path& dir, const ExperimentOutcome& outcome) {
  for (const auto& a : outcome.artifacts) {
    const auto sub = dir / "trials" / (a.dataset + "_trial" + std::to_string(a.trial));
    std::filesystem::create_directories(sub);
    std::ofstream lt(sub / "loss_trace.csv");
    lt << "method,epoch,loss\n";
    for (const auto& [method, trace] : a.loss_traces)
      for (std::size_t e = 0; e < trace.size(); ++e) lt << method << ',' << e + 1 << ',' << csv::format_number(trace[e]) << '\n';
    std::ofstream meta(sub / "dataset.json");
    meta << nlohmann::json{{"dataset", a.dataset}, {"dim", a.dim}, {"trial", a.trial}, {"seed", a.seed},
                           {"params", a.dataset_params}}
                .dump(2)
         << '\n';
    if (a.curve) {
      std::ofstream cv(sub / "curve.csv");
      cv << "x,signal,true_std";
      for (const auto& [method, _] : a.curve->predicted) cv << ',' << method << "_mean," << method << "_std";
      cv << '\n';
      for (std::size_t i = 0; i < a.curve->x.size(); ++i) {
        cv << csv::format_number(a.curve->x[i]) << ',' << csv::format_number(a.curve->signal[i]) << ','
           << csv::format_number(a.curve->true_std[i]);
        for (const auto& [method, ms] : a.curve->predicted)
          cv << ',' << csv::format_number(ms.first[i]) << ',' << csv::format_number(ms.second[i]);
        cv << '\n';
      }
    }
  }
}

}  // namespace tictac
