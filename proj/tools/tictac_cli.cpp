// tictac: run experiments, evaluate TAC on saved predictions, materialize
// datasets, download UCI tables and run the built-in checks.

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "support/criteria.hpp"
#include "tictac/csv.hpp"
#include "tictac/data.hpp"
#include "tictac/error.hpp"
#include "tictac/experiment.hpp"
#include "tictac/metrics.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tictac;

namespace {

enum class Kind { Str, Int, Real, List, Flag };

struct Key {
  const char* name;
  Kind kind;
  const char* help;
};

// Every `run` setting, usable as --flag-name or as "flag_name" in a config file.
const std::vector<Key> kRunKeys = {
    {"experiment", Kind::Str, "univariate | multivariate | uci"},
    {"methods", Kind::List, "comma list of tic,nll,diagonal,beta_nll,faithful,mse (or all)"},
    {"beta", Kind::Real, "beta-NLL exponent in [0, 1] (default 0.5)"},
    {"trials", Kind::Int, "trials per dataset (default 1)"},
    {"seed", Kind::Int, "base seed (default 0)"},
    {"out", Kind::Str, "output directory (default results)"},
    {"d", Kind::List, "multivariate dimensions: 4,8,12 or 4:20:2"},
    {"variant", Kind::Str, "univariate variant: const5 | abs_x | five_minus_abs_x"},
    {"samples", Kind::Int, "samples per dataset (default 10000 univariate, 1000*d multivariate)"},
    {"csv", Kind::List, "UCI csv paths"},
    {"drop_columns", Kind::List, "column names removed from every UCI table"},
    {"delimiter", Kind::Str, "UCI csv delimiter (default ,)"},
    {"epochs", Kind::Int, "epochs (default 100)"},
    {"batch_size", Kind::Int, "batch size (default 256 synthetic, 64 uci)"},
    {"lr", Kind::Real, "Adam learning rate (default 1e-3)"},
    {"hidden", Kind::List, "hidden widths of the mean network (default 64,64)"},
    {"cov_hidden", Kind::List, "hidden widths of the covariance network (default 64,64)"},
    {"activation", Kind::Str, "tanh | softplus"},
    {"threads", Kind::Int, "workers inside one training run (default 1)"},
    {"jobs", Kind::Int, "trials run concurrently (default 1)"},
    {"curve_points", Kind::Int, "univariate evaluation grid size (default 1001)"},
    {"timing", Kind::Flag, "record wall time in results.csv"},
    {"quiet", Kind::Flag, "no per-epoch progress lines"},
};

std::string flag_name(const std::string& key) {
  std::string s = "--" + key;
  for (char& c : s)
    if (c == '_') c = '-';
  return s;
}

int exit_code(ErrorCode c) {
  switch (c) {
    case ErrorCode::InvalidArgument:
    case ErrorCode::InvalidArchitecture:
    case ErrorCode::ShapeMismatch:
    case ErrorCode::DimensionTooSmall:
    case ErrorCode::MalformedCsv:
    case ErrorCode::TooFewColumns: return 1;
    default: return 2;
  }
}

[[noreturn]] void invalid(const std::string& msg) { throw Error(ErrorCode::InvalidArgument, msg); }

std::vector<std::string> split_list(const json& v, const std::string& key) {
  std::vector<std::string> out;
  if (v.is_array()) {
    for (const auto& e : v) out.push_back(e.is_string() ? e.get<std::string>() : e.dump());
  } else if (v.is_string()) {
    for (auto& f : csv::split_line(v.get<std::string>(), ','))
      if (!csv::trim(f).empty()) out.emplace_back(csv::trim(f));
  } else if (v.is_number()) {
    out.push_back(v.dump());
  } else {
    invalid(key + " must be a list");
  }
  return out;
}

std::uint64_t as_uint(const json& v, const std::string& key) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(v.get<std::int64_t>());
  if (v.is_string()) {
    const std::string s = v.get<std::string>();
    std::uint64_t out = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    if (ec == std::errc() && p == s.data() + s.size()) return out;
  }
  invalid(key + " must be a non-negative integer");
}

double as_real(const json& v, const std::string& key) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string())
    if (auto d = csv::parse_number(v.get<std::string>())) return *d;
  invalid(key + " must be a number");
}

std::vector<std::size_t> as_sizes(const json& v, const std::string& key) {
  std::vector<std::size_t> out;
  for (const auto& s : split_list(v, key)) {
    const auto parts = csv::split_line(s, ':');
    if (parts.size() == 2 || parts.size() == 3) {
      const auto lo = as_uint(parts[0], key), hi = as_uint(parts[1], key);
      const auto step = parts.size() == 3 ? as_uint(parts[2], key) : 1;
      if (step == 0 || lo > hi) invalid(key + " range '" + s + "' is empty");
      for (auto x = lo; x <= hi; x += step) out.push_back(x);
    } else {
      out.push_back(as_uint(s, key));
    }
  }
  return out;
}

bool as_bool(const json& v, const std::string& key) {
  if (v.is_boolean()) return v.get<bool>();
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
  }
  invalid(key + " must be true or false");
}

json read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open config " + path);
  json cfg;
  try {
    cfg = json::parse(in);
  } catch (const json::exception& e) {
    invalid("config " + path + ": " + e.what());
  }
  if (!cfg.is_object()) invalid("config must be a flat JSON object");
  for (const auto& [k, _] : cfg.items()) {
    bool known = false;
    for (const auto& key : kRunKeys) known = known || k == key.name;
    if (!known) invalid("unknown config key '" + k + "'");
  }
  return cfg;
}

// Turns the merged settings into an experiment; nothing is computed here.
ExperimentSpec build_spec(const json& cfg, std::ostream* progress) {
  ExperimentSpec spec;
  auto has = [&](const char* k) { return cfg.contains(k); };
  spec.kind = experiment_kind_from_string(has("experiment") ? cfg["experiment"].get<std::string>() : "multivariate");
  const double beta = has("beta") ? as_real(cfg["beta"], "beta") : 0.5;
  if (!has("methods")) invalid("--methods is required");
  for (const auto& m : split_list(cfg["methods"], "methods")) {
    if (m == "all") {
      for (const auto& a : all_methods(beta)) spec.methods.push_back(a);
    } else {
      spec.methods.push_back(parse_method(m, beta));
    }
  }
  if (has("trials")) spec.trials = as_uint(cfg["trials"], "trials");
  if (has("seed")) spec.seed = as_uint(cfg["seed"], "seed");
  if (has("d")) spec.dims = as_sizes(cfg["d"], "d");
  if (has("variant")) spec.variant = univariate_variant_from_string(cfg["variant"].get<std::string>());
  if (has("samples")) spec.samples = as_uint(cfg["samples"], "samples");
  if (has("csv")) {
    std::vector<std::string> drop;
    if (has("drop_columns")) drop = split_list(cfg["drop_columns"], "drop_columns");
    char delim = ',';
    if (has("delimiter")) {
      const auto d = cfg["delimiter"].get<std::string>();
      if (d.size() != 1) invalid("delimiter must be one character");
      delim = d[0];
    }
    for (const auto& p : split_list(cfg["csv"], "csv")) spec.uci.push_back({p, drop, delim});
  }
  if (has("epochs")) spec.train.epochs = as_uint(cfg["epochs"], "epochs");
  if (has("batch_size")) spec.batch_size = as_uint(cfg["batch_size"], "batch_size");
  if (has("lr")) spec.train.adam.learning_rate = as_real(cfg["lr"], "lr");
  if (has("hidden")) spec.train.mean_hidden = as_sizes(cfg["hidden"], "hidden");
  if (has("cov_hidden")) spec.train.cov_hidden = as_sizes(cfg["cov_hidden"], "cov_hidden");
  if (has("activation")) spec.train.activation = activation_from_string(cfg["activation"].get<std::string>());
  if (has("threads")) spec.train.threads = as_uint(cfg["threads"], "threads");
  if (has("jobs")) spec.jobs = as_uint(cfg["jobs"], "jobs");
  if (has("curve_points")) spec.curve_points = as_uint(cfg["curve_points"], "curve_points");
  if (has("timing")) spec.record_timing = as_bool(cfg["timing"], "timing");
  const bool quiet = has("quiet") && as_bool(cfg["quiet"], "quiet");
  spec.log = progress;
  if (!quiet) spec.train.progress = progress;
  for (const auto& s : spec.uci)
    if (!fs::exists(s.path)) invalid("csv file not found: " + s.path);
  spec.validate();
  return spec;
}

json resolved_config(const ExperimentSpec& s, const std::string& out) {
  json methods = json::array();
  for (const auto& m : s.methods) methods.push_back(method_name(m));
  json j = {{"experiment", to_string(s.kind)},
            {"methods", methods},
            {"beta", s.methods.empty() ? 0.5 : s.methods.front().beta},
            {"trials", s.trials},
            {"seed", s.seed},
            {"out", out},
            {"epochs", s.train.epochs},
            {"lr", s.train.adam.learning_rate},
            {"adam_betas", {s.train.adam.beta1, s.train.adam.beta2}},
            {"adam_eps", s.train.adam.eps},
            {"lr_decay", {{"factor", s.train.schedule.factor}, {"at_fraction", s.train.schedule.at_fraction}}},
            {"hidden", s.train.mean_hidden},
            {"cov_hidden", s.train.cov_hidden},
            {"activation", to_string(s.train.activation)},
            {"threads", s.train.threads},
            {"jobs", s.jobs},
            {"timing", s.record_timing}};
  j["batch_size"] = s.batch_size ? *s.batch_size : (s.kind == ExperimentKind::Uci ? 64 : 256);
  switch (s.kind) {
    case ExperimentKind::Univariate:
      j["variant"] = to_string(s.variant);
      j["samples"] = s.samples ? s.samples : 10000;
      j["curve_points"] = s.curve_points;
      break;
    case ExperimentKind::Multivariate:
      j["d"] = s.dims;
      j["samples"] = s.samples;
      break;
    case ExperimentKind::Uci: {
      json paths = json::array();
      for (const auto& u : s.uci) paths.push_back(u.path);
      j["csv"] = paths;
      break;
    }
  }
  return j;
}

void write_file(const fs::path& p, const std::string& body) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw Error(ErrorCode::IoError, "cannot write " + p.string());
  os << body;
}

int cmd_run(const json& cfg) {
  const ExperimentSpec spec = build_spec(cfg, &std::cerr);
  const std::string out = cfg.contains("out") ? cfg["out"].get<std::string>() : "results";
  const ExperimentOutcome outcome = run_trials(spec);
  if (outcome.rows.empty()) throw Error(ErrorCode::DivergedLoss, "every trial failed");

  fs::create_directories(out);
  std::ostringstream rc;
  write_results_csv(rc, outcome.rows, spec.record_timing);
  write_file(fs::path(out) / "results.csv", rc.str());
  write_file(fs::path(out) / "results.json", results_json(resolved_config(spec, out), outcome, spec).dump(2) + "\n");
  const auto agg = aggregate(outcome.rows);
  if (std::any_of(agg.begin(), agg.end(), [](const AggregateRow& a) { return a.tac.has_value(); })) {
    std::ostringstream ts;
    write_tac_series_csv(ts, agg);
    write_file(fs::path(out) / "tac_vs_dim.csv", ts.str());
  }
  write_trial_artifacts(out, outcome);

  for (const auto& a : agg) {
    std::cout << "method=" << a.method << " dataset=" << a.dataset << " trials=" << a.trials
              << " tac=" << (a.tac ? csv::format_number(*a.tac) : "NA") << " mse=" << csv::format_number(a.mse)
              << " mean_nll=" << csv::format_number(a.mean_nll);
    if (a.std_abs_x_correlation)
      std::cout << " std_abs_x_corr=" << csv::format_number(*a.std_abs_x_correlation)
                << " mean_rmse=" << csv::format_number(*a.mean_rmse);
    std::cout << '\n';
  }
  return 0;
}

int cmd_eval_tac(const std::string& y_path, const std::string& yhat_path, const std::string& cov_path,
                 bool per_sample) {
  const Matrix y = csv::read_numeric_table(y_path);
  const Matrix yh = csv::read_numeric_table(yhat_path);
  const std::vector<Matrix> covs = csv::read_numeric_blocks(cov_path);
  if (y.rows() != yh.rows() || y.cols() != yh.cols())
    throw Error(ErrorCode::ShapeMismatch, "y and y_hat have different shapes");
  if (covs.size() != y.rows())
    throw Error(ErrorCode::ShapeMismatch, std::to_string(covs.size()) + " covariance blocks for " +
                                              std::to_string(y.rows()) + " samples");
  double total = 0.0;
  for (std::size_t s = 0; s < y.rows(); ++s) {
    if (covs[s].rows() != y.cols() || covs[s].cols() != y.cols())
      throw Error(ErrorCode::ShapeMismatch, "covariance block " + std::to_string(s) + " is not n x n");
    const double t = tac(y.row(s), yh.row(s), SymMatrix(covs[s]));
    if (per_sample) std::cout << "sample=" << s << " tac=" << csv::format_number(t) << '\n';
    total += t;
  }
  std::cout << "tac=" << csv::format_number(total / static_cast<double>(y.rows())) << '\n';
  return 0;
}

int cmd_gen_data(const std::string& experiment, const std::string& variant, std::size_t d, std::size_t samples,
                 std::uint64_t seed, const std::string& csv_path, const std::string& out) {
  Dataset ds;
  switch (experiment_kind_from_string(experiment)) {
    case ExperimentKind::Univariate:
      ds = gen_univariate(univariate_variant_from_string(variant), samples ? samples : 10000, seed);
      break;
    case ExperimentKind::Multivariate: {
      MultivariateOptions opt;
      opt.samples = samples;
      ds = gen_multivariate(d, seed, opt).first;
      break;
    }
    case ExperimentKind::Uci:
      if (csv_path.empty()) invalid("--csv is required for uci");
      ds = random_feature_split(load_uci({csv_path}), seed);
      break;
  }
  write_dataset(ds, out);
  std::cout << "dataset=" << ds.name << " samples=" << ds.size() << " input_dim=" << ds.input_dim()
            << " target_dim=" << ds.target_dim() << " out=" << out << '\n';
  return 0;
}

// Known sources; anything else can be passed as name=url.
const std::map<std::string, std::string> kUciSources = {
    {"winequality-red", "https://archive.ics.uci.edu/ml/machine-learning-databases/wine-quality/winequality-red.csv"},
    {"winequality-white",
     "https://archive.ics.uci.edu/ml/machine-learning-databases/wine-quality/winequality-white.csv"},
};

int cmd_fetch_uci(const std::vector<std::string>& names, const std::string& out) {
  fs::create_directories(out);
  for (const auto& entry : names) {
    std::string name = entry, url;
    if (const auto eq = entry.find('='); eq != std::string::npos) {
      name = entry.substr(0, eq);
      url = entry.substr(eq + 1);
    } else if (auto it = kUciSources.find(entry); it != kUciSources.end()) {
      url = it->second;
    } else {
      invalid("unknown dataset '" + entry + "'; use name=url");
    }
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) invalid("bad url " + url);
    const auto path_start = url.find('/', scheme_end + 3);
    const std::string host = url.substr(0, path_start);
    const std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);
    httplib::Client client(host);
    client.set_follow_location(true);
    client.set_connection_timeout(15);
    client.set_read_timeout(60);
    auto res = client.Get(path);
    if (!res) throw Error(ErrorCode::IoError, "download of " + url + " failed: " + httplib::to_string(res.error()));
    if (res->status != 200)
      throw Error(ErrorCode::IoError, "download of " + url + " returned HTTP " + std::to_string(res->status));
    const fs::path dest = fs::path(out) / (name + ".csv");
    write_file(dest, res->body);
    std::cout << "fetched=" << name << " bytes=" << res->body.size() << " path=" << dest.string() << '\n';
  }
  return 0;
}

int cmd_selftest() {
  bool ok = true;
  const std::vector<std::pair<std::string, std::function<criteria::Verdict()>>> checks = {
      {"derivatives", [] { return criteria::derivatives(); }},
      {"taylor_moments", [] { return criteria::taylor_moments(); }},
      {"tic_positive_definite", [] { return criteria::tic_pd(); }},
      {"tac_oracle", [] { return criteria::tac_oracle(); }},
      {"loss_gradients", [] { return criteria::loss_gradients(); }},
      {"determinism", [] { return criteria::determinism(); }},
  };
  for (const auto& [name, fn] : checks) {
    const auto v = fn();
    ok = ok && v.pass;
    std::cout << (v.pass ? "PASS " : "FAIL ") << name << ' ' << v.detail << std::endl;
  }
  return ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Heteroscedastic covariance estimation: TIC, TAC and baselines"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "train and evaluate methods over trials");
  std::string config_path;
  run->add_option("--config", config_path, "flat JSON file with the same keys as the flags");
  std::map<std::string, std::string> run_values;
  std::map<std::string, bool> run_flags;
  std::map<std::string, CLI::Option*> run_opts;
  for (const auto& key : kRunKeys) {
    if (key.kind == Kind::Flag) {
      run_opts[key.name] = run->add_flag(flag_name(key.name), run_flags[key.name], key.help);
    } else {
      run_opts[key.name] = run->add_option(flag_name(key.name), run_values[key.name], key.help);
    }
  }

  auto* eval = app.add_subcommand("eval-tac", "TAC of saved predictions");
  std::string y_path, yhat_path, cov_path;
  bool per_sample = false;
  eval->add_option("--y", y_path, "targets csv, one sample per row")->required();
  eval->add_option("--y-hat", yhat_path, "predicted means csv")->required();
  eval->add_option("--cov", cov_path, "n x n covariance blocks separated by blank lines")->required();
  eval->add_flag("--per-sample", per_sample, "also print each sample's TAC");

  auto* gen = app.add_subcommand("gen-data", "write a dataset to csv");
  std::string g_experiment = "multivariate", g_variant = "const5", g_csv, g_out = "data/generated";
  std::size_t g_d = 4, g_samples = 0;
  std::uint64_t g_seed = 0;
  gen->add_option("--experiment", g_experiment, "univariate | multivariate | uci");
  gen->add_option("--variant", g_variant, "univariate variant");
  gen->add_option("--d", g_d, "multivariate dimension");
  gen->add_option("--samples", g_samples, "sample count (0: default)");
  gen->add_option("--seed", g_seed, "seed");
  gen->add_option("--csv", g_csv, "UCI csv to split");
  gen->add_option("--out", g_out, "output directory");

  auto* fetch = app.add_subcommand("fetch-uci", "download UCI csv files");
  std::vector<std::string> f_names{"winequality-red"};
  std::string f_out = "data/uci";
  fetch->add_option("names", f_names, "dataset names or name=url pairs");
  fetch->add_option("--out", f_out, "download directory");

  auto* self = app.add_subcommand("selftest", "derivative, moment, TAC, loss and determinism checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error_code=InvalidArgument message=\"" << e.what() << "\"\n";
    return 1;
  }

  try {
    if (*run) {
      json cfg = config_path.empty() ? json::object() : read_config(config_path);
      for (const auto& key : kRunKeys) {
        if (run_opts[key.name]->count() == 0) continue;
        if (key.kind == Kind::Flag) {
          cfg[key.name] = run_flags[key.name];
        } else {
          cfg[key.name] = run_values[key.name];
        }
      }
      return cmd_run(cfg);
    }
    if (*eval) return cmd_eval_tac(y_path, yhat_path, cov_path, per_sample);
    if (*gen) return cmd_gen_data(g_experiment, g_variant, g_d, g_samples, g_seed, g_csv, g_out);
    if (*fetch) return cmd_fetch_uci(f_names, f_out);
    if (*self) return cmd_selftest();
  } catch (const Error& e) {
    std::cerr << "error_code=" << to_string(e.code()) << " message=\"" << e.what() << "\"\n";
    return exit_code(e.code());
  } catch (const json::exception& e) {
    std::cerr << "error_code=InvalidArgument message=\"" << e.what() << "\"\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error_code=IoError message=\"" << e.what() << "\"\n";
    return 2;
  }
  return 0;
}
