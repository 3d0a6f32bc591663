#pragma once

// Dataset generators and loaders:
//  * univariate heteroscedastic sinusoids,
//  * the multivariate Q|X construction (Y|X plus input-dependent noise Z),
//  * CSV tables with z-score normalization and random input/target splits.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tictac/covheads.hpp"
#include "tictac/csv.hpp"
#include "tictac/error.hpp"
#include "tictac/linalg.hpp"
#include "tictac/matrix.hpp"

namespace tictac {

struct Dataset {
  Matrix inputs;   // N x m
  Matrix targets;  // N x n
  std::string name;
  std::uint64_t seed = 0;
  nlohmann::json params = nlohmann::json::object();
  std::vector<std::string> input_names;
  std::vector<std::string> target_names;

  std::size_t size() const noexcept { return inputs.rows(); }
  std::size_t input_dim() const noexcept { return inputs.cols(); }
  std::size_t target_dim() const noexcept { return targets.cols(); }
};

// ---------------------------------------------------------------------------
// Univariate sinusoids

enum class UnivariateVariant { Const5, AbsX, FiveMinusAbsX };

inline const char* to_string(UnivariateVariant v) {
  switch (v) {
    case UnivariateVariant::Const5: return "const5";
    case UnivariateVariant::AbsX: return "abs_x";
    case UnivariateVariant::FiveMinusAbsX: return "five_minus_abs_x";
  }
  return "?";
}

inline UnivariateVariant univariate_variant_from_string(const std::string& s) {
  if (s == "const5" || s == "CONST_5") return UnivariateVariant::Const5;
  if (s == "abs_x" || s == "ABS_X") return UnivariateVariant::AbsX;
  if (s == "five_minus_abs_x" || s == "FIVE_MINUS_ABS_X") return UnivariateVariant::FiveMinusAbsX;
  throw Error(ErrorCode::InvalidArgument, "unknown univariate variant '" + s + "'");
}

inline constexpr double kUnivariateXMin = -5.0;
inline constexpr double kUnivariateXMax = 5.0;

inline double univariate_amplitude(UnivariateVariant v, double x) noexcept {
  switch (v) {
    case UnivariateVariant::Const5: return 5.0;
    case UnivariateVariant::AbsX: return std::abs(x);
    case UnivariateVariant::FiveMinusAbsX: return 5.0 - std::abs(x);
  }
  return 0.0;
}

/// Noiseless signal A(x) sin(2 pi x).
inline double univariate_signal(UnivariateVariant v, double x) noexcept {
  return univariate_amplitude(v, x) * std::sin(2.0 * std::numbers::pi * x);
}

/// A(x) sin(2 pi x) + |x| eta; the noise standard deviation is |x|.
inline double univariate_target(UnivariateVariant v, double x, double eta) noexcept {
  return univariate_signal(v, x) + std::abs(x) * eta;
}

/// x ~ U(-5, 5), y = univariate_target(x, eta), eta ~ N(0, 1) scaled by
/// `noise_scale` (0 gives the noiseless curve).
inline Dataset gen_univariate(UnivariateVariant variant, std::size_t count, std::uint64_t seed,
                              double noise_scale = 1.0) {
  if (count < 1) throw Error(ErrorCode::InvalidArgument, "count must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(kUnivariateXMin, kUnivariateXMax);
  std::normal_distribution<double> normal(0.0, 1.0);
  Dataset ds;
  ds.inputs = Matrix(count, 1);
  ds.targets = Matrix(count, 1);
  for (std::size_t i = 0; i < count; ++i) {
    const double x = ux(rng);
    const double eta = normal(rng) * noise_scale;
    ds.inputs(i, 0) = x;
    ds.targets(i, 0) = univariate_target(variant, x, eta);
  }
  ds.name = std::string("univariate_") + to_string(variant);
  ds.seed = seed;
  ds.params = {{"variant", to_string(variant)}, {"count", count}, {"noise_scale", noise_scale}};
  ds.input_names = {"x"};
  ds.target_names = {"y"};
  return ds;
}

// ---------------------------------------------------------------------------
// Multivariate Q | X

/// Joint Gaussian over (X, Y), each of dimension d. Q = Y + Z with
/// Z | x ~ N(0, diag(sqrt|x|)) independent of Y given X.
struct MultivariateSpec {
  std::size_t d = 0;
  Vector joint_mean;    // 2d, X first
  SymMatrix joint_cov;  // 2d x 2d
  std::size_t samples = 0;
  bool suppress_z = false;

  SymMatrix block(std::size_t r0, std::size_t c0) const {
    Matrix b(d, d);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) b(i, j) = joint_cov(r0 + i, c0 + j);
    return SymMatrix(std::move(b));
  }
  Vector x_mean() const { return Vector(joint_mean.begin(), joint_mean.begin() + d); }
  SymMatrix x_cov() const { return block(0, 0); }

  /// Y | X = x by Gaussian conditioning.
  GaussianPrediction y_given_x(std::span<const double> x) const {
    ConditionSpec spec;
    for (std::size_t i = 0; i < d; ++i) spec.observed_indices.push_back(i);
    spec.observed_values.assign(x.begin(), x.end());
    ConditionalGaussian c = condition_gaussian(joint_mean, joint_cov, spec);
    return {std::move(c.mean), std::move(c.cov)};
  }

  /// Q | X = x, the ground-truth heteroscedastic target distribution.
  GaussianPrediction q_given_x(std::span<const double> x) const {
    GaussianPrediction g = y_given_x(x);
    if (!suppress_z) {
      SymMatrix cov = g.cov;
      for (std::size_t i = 0; i < d; ++i) cov.set(i, i, cov(i, i) + std::sqrt(std::abs(x[i])));
      g.cov = std::move(cov);
    }
    return g;
  }
};

struct MultivariateOptions {
  std::size_t samples = 0;        // 0: 1000 * d
  bool suppress_z = false;        // test hook: no heteroscedastic term
  bool block_diagonal = false;    // test hook: X and Y independent
  double ridge = 0.1;             // joint_cov = A A^T + ridge I
};

namespace detail {

/// Draws from N(mean, L L^T) given the Cholesky factor L.
inline void sample_gaussian(std::mt19937_64& rng, std::normal_distribution<double>& normal,
                            std::span<const double> mean, const Matrix& lower, std::span<double> out) {
  const std::size_t n = mean.size();
  Vector xi(n);
  for (auto& v : xi) v = normal(rng);
  for (std::size_t i = 0; i < n; ++i) {
    double s = mean[i];
    for (std::size_t k = 0; k <= i; ++k) s += lower(i, k) * xi[k];
    out[i] = s;
  }
}

}  // namespace detail

/// Random joint (X, Y) distribution and N samples of (x, q). d must be even
/// with 4 <= d <= 20.
inline std::pair<Dataset, MultivariateSpec> gen_multivariate(std::size_t d, std::uint64_t seed,
                                                             const MultivariateOptions& opt = {}) {
  if (d < 4 || d > 20 || d % 2 != 0) throw Error(ErrorCode::InvalidArgument, "d must be even and in [4, 20]");
  const std::size_t dim = 2 * d;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);

  Matrix a(dim, dim);
  for (auto& v : a.data()) v = normal(rng);
  if (opt.block_diagonal)
    for (std::size_t i = 0; i < dim; ++i)
      for (std::size_t j = 0; j < dim; ++j)
        if ((i < d) != (j < d)) a(i, j) = 0.0;
  SymMatrix joint(gram_rows(a));
  joint.add_to_diagonal(opt.ridge);

  MultivariateSpec spec;
  spec.d = d;
  spec.joint_mean.resize(dim);
  for (auto& v : spec.joint_mean) v = unif(rng);
  spec.joint_cov = std::move(joint);
  spec.samples = opt.samples ? opt.samples : 1000 * d;
  spec.suppress_z = opt.suppress_z;

  // Y | X has a constant covariance; only its mean moves with x.
  const Vector mx = spec.x_mean();
  const CholFactor lx = cholesky(spec.x_cov());
  ConditionSpec cs;
  for (std::size_t i = 0; i < d; ++i) cs.observed_indices.push_back(i);
  cs.observed_values = mx;
  const ConditionalGaussian base = condition_gaussian(spec.joint_mean, spec.joint_cov, cs);
  const CholFactor ly = cholesky(base.cov);
  // Regression matrix K = S_yx S_xx^-1, so E[Y|x] = base.mean + K (x - mx).
  Matrix syx(d, d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) syx(i, j) = spec.joint_cov(d + i, j);
  const Matrix k = solve(lx, syx.transpose()).transpose();

  Dataset ds;
  ds.inputs = Matrix(spec.samples, d);
  ds.targets = Matrix(spec.samples, d);
  Vector x(d), y(d), ym(d);
  for (std::size_t s = 0; s < spec.samples; ++s) {
    detail::sample_gaussian(rng, normal, mx, lx.lower(), x);
    for (std::size_t i = 0; i < d; ++i) {
      double v = base.mean[i];
      for (std::size_t j = 0; j < d; ++j) v += k(i, j) * (x[j] - mx[j]);
      ym[i] = v;
    }
    detail::sample_gaussian(rng, normal, ym, ly.lower(), y);
    for (std::size_t i = 0; i < d; ++i) {
      const double z = opt.suppress_z ? 0.0 : std::sqrt(std::sqrt(std::abs(x[i]))) * normal(rng);
      ds.inputs(s, i) = x[i];
      ds.targets(s, i) = y[i] + z;
    }
  }
  ds.name = "multivariate_d" + std::to_string(d);
  ds.seed = seed;
  ds.params = {{"d", d}, {"samples", spec.samples}, {"ridge", opt.ridge}, {"suppress_z", opt.suppress_z},
               {"block_diagonal", opt.block_diagonal}};
  for (std::size_t i = 0; i < d; ++i) {
    ds.input_names.push_back("x" + std::to_string(i));
    ds.target_names.push_back("q" + std::to_string(i));
  }
  return {std::move(ds), std::move(spec)};
}

// ---------------------------------------------------------------------------
// CSV tables

struct UciSchema {
  std::string path;
  std::vector<std::string> drop_columns;  // dropped by name before anything else
  char delimiter = ',';
  std::size_t min_columns = 1;            // TooFewColumns below this
};

/// Normalized numeric table.
struct Table {
  std::string name;
  std::vector<std::string> columns;
  Matrix values;  // rows x columns, z-scored
  Vector means;   // pre-normalization statistics per retained column
  Vector stds;
  std::vector<std::string> warnings;
};

inline bool is_missing_token(std::string_view s) {
  s = csv::trim(s);
  return s.empty() || s == "?" || s == "NA" || s == "NaN" || s == "nan" || s == "N/A";
}

/// Reads a CSV with a header row, keeps columns whose every present value
/// is numeric, drops rows with missing values, drops constant columns, and
/// z-scores each remaining column (population std).
inline Table load_uci(const UciSchema& schema) {
  std::ifstream in(schema.path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + schema.path);
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::MalformedCsv, schema.path + ": empty file");
  std::vector<std::string> header = csv::split_line(line, schema.delimiter);
  for (auto& h : header) h = std::string(csv::trim(h));
  const std::size_t ncol = header.size();

  std::vector<std::vector<std::string>> raw;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (csv::trim(line).empty()) continue;
    auto fields = csv::split_line(line, schema.delimiter);
    if (fields.size() != ncol)
      throw Error(ErrorCode::MalformedCsv, schema.path + ":" + std::to_string(lineno) + ": expected " +
                                               std::to_string(ncol) + " fields, got " +
                                               std::to_string(fields.size()));
    raw.push_back(std::move(fields));
  }
  if (raw.empty()) throw Error(ErrorCode::MalformedCsv, schema.path + ": no data rows");

  Table t;
  t.name = std::filesystem::path(schema.path).stem().string();
  const std::set<std::string> drop(schema.drop_columns.begin(), schema.drop_columns.end());
  std::vector<std::size_t> keep;
  for (std::size_t c = 0; c < ncol; ++c) {
    if (drop.count(header[c])) continue;
    bool numeric = true;
    for (const auto& row : raw)
      if (!is_missing_token(row[c]) && !csv::parse_number(row[c])) {
        numeric = false;
        break;
      }
    if (numeric)
      keep.push_back(c);
    else
      t.warnings.push_back("dropped non-numeric column '" + header[c] + "'");
  }

  std::vector<std::vector<double>> rows;
  std::size_t dropped_rows = 0;
  for (const auto& row : raw) {
    std::vector<double> r;
    r.reserve(keep.size());
    bool ok = true;
    for (std::size_t c : keep) {
      const auto v = csv::parse_number(row[c]);
      if (!v) {
        ok = false;
        break;
      }
      r.push_back(*v);
    }
    if (ok)
      rows.push_back(std::move(r));
    else
      ++dropped_rows;
  }
  if (dropped_rows) t.warnings.push_back("dropped " + std::to_string(dropped_rows) + " rows with missing values");
  if (rows.empty()) throw Error(ErrorCode::MalformedCsv, schema.path + ": no complete rows");

  const double count = static_cast<double>(rows.size());
  std::vector<std::size_t> final_cols;
  for (std::size_t k = 0; k < keep.size(); ++k) {
    double mean = 0.0;
    for (const auto& r : rows) mean += r[k];
    mean /= count;
    double var = 0.0;
    for (const auto& r : rows) var += (r[k] - mean) * (r[k] - mean);
    const double sd = std::sqrt(var / count);
    if (!(sd > 0.0)) {
      t.warnings.push_back("dropped constant column '" + header[keep[k]] + "'");
      continue;
    }
    final_cols.push_back(k);
    t.columns.push_back(header[keep[k]]);
    t.means.push_back(mean);
    t.stds.push_back(sd);
  }
  if (final_cols.size() < std::max<std::size_t>(schema.min_columns, 1))
    throw Error(ErrorCode::TooFewColumns, schema.path + ": " + std::to_string(final_cols.size()) +
                                              " usable columns, need " + std::to_string(schema.min_columns));

  t.values = Matrix(rows.size(), final_cols.size());
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t j = 0; j < final_cols.size(); ++j)
      t.values(r, j) = (rows[r][final_cols[j]] - t.means[j]) / t.stds[j];
  return t;
}

/// Number of input columns for a table of `columns` columns: ceil(25%).
constexpr std::size_t input_column_count(std::size_t columns) noexcept { return (columns + 3) / 4; }

/// Random permutation of the columns; the first ceil(25%) become inputs and
/// the rest targets.
inline Dataset random_feature_split(const Table& table, std::uint64_t seed) {
  const std::size_t c = table.values.cols();
  if (c < 4) throw Error(ErrorCode::TooFewColumns, "random_feature_split needs >= 4 columns, got " + std::to_string(c));
  std::vector<std::size_t> perm(c);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  const std::size_t m = input_column_count(c);

  Dataset ds;
  ds.inputs = Matrix(table.values.rows(), m);
  ds.targets = Matrix(table.values.rows(), c - m);
  for (std::size_t r = 0; r < table.values.rows(); ++r)
    for (std::size_t j = 0; j < c; ++j) {
      if (j < m)
        ds.inputs(r, j) = table.values(r, perm[j]);
      else
        ds.targets(r, j - m) = table.values(r, perm[j]);
    }
  for (std::size_t j = 0; j < c; ++j) (j < m ? ds.input_names : ds.target_names).push_back(table.columns[perm[j]]);
  ds.name = table.name;
  ds.seed = seed;
  ds.params = {{"input_columns", ds.input_names}, {"target_columns", ds.target_names}};
  return ds;
}

/// inputs.csv, targets.csv and meta.json under `dir`.
inline void write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream xi(dir / "inputs.csv");
  std::ofstream yt(dir / "targets.csv");
  std::ofstream mj(dir / "meta.json");
  if (!xi || !yt || !mj) throw Error(ErrorCode::IoError, "cannot write dataset into " + dir.string());
  csv::write_matrix(xi, ds.inputs, ds.input_names);
  csv::write_matrix(yt, ds.targets, ds.target_names);
  nlohmann::json meta = {{"name", ds.name},
                         {"seed", ds.seed},
                         {"samples", ds.size()},
                         {"input_dim", ds.input_dim()},
                         {"target_dim", ds.target_dim()},
                         {"params", ds.params}};
  mj << meta.dump(2) << '\n';
}

}  // namespace tictac
