#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "support/oracles.hpp"
#include "tictac/data.hpp"

using namespace tictac;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "tictac_test_data";
  fs::create_directories(dir);
  return dir / name;
}

std::string write_file(const std::string& name, const std::string& text) {
  const fs::path p = scratch(name);
  std::ofstream(p) << text;
  return p.string();
}

}  // namespace

TEST(Univariate, SignalExamples) {
  for (auto v : {UnivariateVariant::Const5, UnivariateVariant::AbsX, UnivariateVariant::FiveMinusAbsX}) {
    EXPECT_EQ(univariate_target(v, 0.0, 3.0), 0.0);
  }
  EXPECT_NEAR(univariate_target(UnivariateVariant::Const5, 0.25, 0.0), 5.0, 1e-12);
  EXPECT_NEAR(univariate_target(UnivariateVariant::AbsX, 0.25, 0.0), 0.25, 1e-12);
  EXPECT_NEAR(univariate_target(UnivariateVariant::FiveMinusAbsX, -0.75, 0.0), 4.25, 1e-12);
  EXPECT_NEAR(univariate_target(UnivariateVariant::Const5, -2.0, 1.5), 3.0, 1e-12);
}

TEST(Univariate, NoiselessMatchesSignal) {
  const Dataset ds = gen_univariate(UnivariateVariant::AbsX, 200, 3, 0.0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const double x = ds.inputs(i, 0);
    EXPECT_GE(x, -5.0);
    EXPECT_LT(x, 5.0);
    EXPECT_EQ(ds.targets(i, 0), univariate_signal(UnivariateVariant::AbsX, x));
  }
}

TEST(Univariate, ResidualVarianceTracksSquaredInput) {
  const Dataset ds = gen_univariate(UnivariateVariant::Const5, 100000, 4);
  std::vector<double> s1(10, 0.0), s2(10, 0.0), x2(10, 0.0);
  std::vector<std::size_t> cnt(10, 0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const double x = ds.inputs(i, 0);
    const auto b = std::min<std::size_t>(9, static_cast<std::size_t>((x + 5.0)));
    const double r = ds.targets(i, 0) - univariate_signal(UnivariateVariant::Const5, x);
    s1[b] += r;
    s2[b] += r * r;
    x2[b] += x * x;
    ++cnt[b];
  }
  for (std::size_t b = 0; b < 10; ++b) {
    const double n = static_cast<double>(cnt[b]);
    EXPECT_NEAR((s2[b] / n - std::pow(s1[b] / n, 2)) / (x2[b] / n), 1.0, 0.06) << "bin " << b;
  }
}

TEST(Univariate, Deterministic) {
  const Dataset a = gen_univariate(UnivariateVariant::Const5, 50, 9);
  const Dataset b = gen_univariate(UnivariateVariant::Const5, 50, 9);
  const Dataset c = gen_univariate(UnivariateVariant::Const5, 50, 10);
  EXPECT_EQ(a.inputs, b.inputs);
  EXPECT_EQ(a.targets, b.targets);
  EXPECT_NE(a.inputs, c.inputs);
}

TEST(Univariate, VariantNames) {
  for (auto v : {UnivariateVariant::Const5, UnivariateVariant::AbsX, UnivariateVariant::FiveMinusAbsX})
    EXPECT_EQ(univariate_variant_from_string(to_string(v)), v);
  EXPECT_THROW(univariate_variant_from_string("sawtooth"), Error);
}

TEST(Multivariate, IndependentBlocksWithoutNoiseIgnoreInput) {
  MultivariateOptions opt;
  opt.block_diagonal = true;
  opt.suppress_z = true;
  const auto [ds, spec] = gen_multivariate(4, 11, opt);
  const GaussianPrediction a = spec.q_given_x(Vector{-3, 0, 1, 2});
  const GaussianPrediction b = spec.q_given_x(Vector{5, 5, -5, 0.1});
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(a.mean[i], b.mean[i], 1e-12);
    EXPECT_NEAR(a.mean[i], spec.joint_mean[4 + i], 1e-12);
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(a.cov(i, j), spec.joint_cov(4 + i, 4 + j), 1e-12);
  }
}

TEST(Multivariate, EmpiricalJointCovariance) {
  MultivariateOptions opt;
  opt.samples = 100000;
  opt.suppress_z = true;
  const auto [ds, spec] = gen_multivariate(4, 12, opt);
  const std::size_t dim = 8;
  Vector mean(dim, 0.0);
  auto value = [&](std::size_t s, std::size_t k) { return k < 4 ? ds.inputs(s, k) : ds.targets(s, k - 4); };
  for (std::size_t s = 0; s < ds.size(); ++s)
    for (std::size_t k = 0; k < dim; ++k) mean[k] += value(s, k) / static_cast<double>(ds.size());
  Matrix cov(dim, dim);
  for (std::size_t s = 0; s < ds.size(); ++s)
    for (std::size_t i = 0; i < dim; ++i)
      for (std::size_t j = 0; j < dim; ++j)
        cov(i, j) += (value(s, i) - mean[i]) * (value(s, j) - mean[j]) / static_cast<double>(ds.size());
  for (std::size_t i = 0; i < dim; ++i) {
    const double scale = std::sqrt(spec.joint_cov(i, i));
    EXPECT_NEAR(mean[i], spec.joint_mean[i], 0.05 * scale);
    for (std::size_t j = 0; j < dim; ++j)
      EXPECT_NEAR(cov(i, j), spec.joint_cov(i, j), 0.05 * scale * std::sqrt(spec.joint_cov(j, j)));
  }
}

TEST(Multivariate, HeteroscedasticTermAddsSqrtAbsInput) {
  const auto [ds, spec] = gen_multivariate(4, 13);
  MultivariateSpec quiet = spec;
  quiet.suppress_z = true;
  const Vector x{-4.0, 0.0, 0.25, 1.0};
  const SymMatrix a = spec.q_given_x(x).cov, b = quiet.q_given_x(x).cov;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(a(i, j) - b(i, j), i == j ? std::sqrt(std::abs(x[i])) : 0.0, 1e-12);
}

TEST(Multivariate, ConditionalResidualsMatchTruth) {
  // Whitened residuals under the true Q | X should have unit second moment.
  MultivariateOptions opt;
  opt.samples = 20000;
  const auto [ds, spec] = gen_multivariate(4, 14, opt);
  double sum = 0.0;
  for (std::size_t s = 0; s < ds.size(); ++s) {
    const GaussianPrediction g = spec.q_given_x(ds.inputs.row(s));
    Vector r(4);
    for (std::size_t i = 0; i < 4; ++i) r[i] = ds.targets(s, i) - g.mean[i];
    const Vector w = solve(cholesky(g.cov), r);
    sum += dot(r, w);
  }
  EXPECT_NEAR(sum / static_cast<double>(ds.size()) / 4.0, 1.0, 0.03);
}

TEST(Multivariate, DeterministicAndSized) {
  const auto a = gen_multivariate(6, 15);
  const auto b = gen_multivariate(6, 15);
  EXPECT_EQ(a.first.size(), 6000u);
  EXPECT_EQ(a.first.input_dim(), 6u);
  EXPECT_EQ(a.first.target_dim(), 6u);
  EXPECT_EQ(a.first.inputs, b.first.inputs);
  EXPECT_EQ(a.first.targets, b.first.targets);
  EXPECT_EQ(a.first.name, "multivariate_d6");
}

TEST(Multivariate, DimensionValidation) {
  for (std::size_t d : {0u, 2u, 5u, 22u}) EXPECT_THROW(gen_multivariate(d, 1), Error) << d;
}

TEST(LoadUci, ConstantColumnDroppedAndZScored) {
  const std::string path = write_file("two_rows.csv", "a,b,c\n0,7,0\n2,7,4\n");
  const Table t = load_uci({path});
  ASSERT_EQ(t.columns, (std::vector<std::string>{"a", "c"}));
  EXPECT_EQ(t.values, (Matrix{{-1, -1}, {1, 1}}));
  EXPECT_EQ(t.warnings.size(), 1u);
}

TEST(LoadUci, PostConditions) {
  std::mt19937_64 rng(16);
  std::normal_distribution<double> nd(3.0, 2.0);
  std::string text = "u;v;w;label\n";
  for (int r = 0; r < 300; ++r)
    text += csv::format_number(nd(rng)) + ";" + csv::format_number(nd(rng)) + ";" +
            (r == 5 ? std::string("?") : csv::format_number(nd(rng))) + ";cat\n";
  const Table t = load_uci({write_file("semi.csv", text), {"v"}, ';'});
  EXPECT_EQ(t.columns, (std::vector<std::string>{"u", "w"}));
  EXPECT_EQ(t.values.rows(), 299u);
  for (std::size_t c = 0; c < 2; ++c) {
    double m = 0.0, v = 0.0;
    for (std::size_t r = 0; r < t.values.rows(); ++r) m += t.values(r, c);
    m /= 299.0;
    for (std::size_t r = 0; r < t.values.rows(); ++r) v += std::pow(t.values(r, c) - m, 2);
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v / 299.0, 1.0, 1e-12);
  }
}

TEST(LoadUci, Errors) {
  auto code_of = [](const UciSchema& s) {
    try {
      load_uci(s);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::InvalidArgument;
  };
  EXPECT_EQ(code_of({write_file("ragged.csv", "a,b\n1,2\n3\n")}), ErrorCode::MalformedCsv);
  EXPECT_EQ(code_of({write_file("empty.csv", "")}), ErrorCode::MalformedCsv);
  EXPECT_EQ(code_of({write_file("const.csv", "a,b\n1,1\n1,1\n")}), ErrorCode::TooFewColumns);
  EXPECT_EQ(code_of({write_file("narrow.csv", "a,b\n1,2\n3,5\n"), {}, ',', 4}), ErrorCode::TooFewColumns);
  EXPECT_EQ(code_of({scratch("absent.csv").string()}), ErrorCode::IoError);
}

TEST(RandomFeatureSplit, ShapesAndSeeds) {
  Table t;
  t.name = "t";
  t.columns = {"c0", "c1", "c2", "c3", "c4", "c5", "c6", "c7", "c8"};
  t.values = Matrix(5, 9);
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 9; ++c) t.values(r, c) = static_cast<double>(10 * c + r);
  const Dataset a = random_feature_split(t, 1), b = random_feature_split(t, 1);
  EXPECT_EQ(a.input_dim(), 3u);
  EXPECT_EQ(a.target_dim(), 6u);
  EXPECT_EQ(a.inputs, b.inputs);
  EXPECT_EQ(a.input_names, b.input_names);
  bool differs = false;
  for (std::uint64_t s = 2; s < 6; ++s) differs |= random_feature_split(t, s).input_names != a.input_names;
  EXPECT_TRUE(differs);
  // Every column used exactly once, with its values carried intact.
  std::vector<std::string> names = a.input_names;
  names.insert(names.end(), a.target_names.begin(), a.target_names.end());
  std::sort(names.begin(), names.end());
  EXPECT_EQ(names, t.columns);
  const std::size_t c0 = std::stoul(a.input_names[0].substr(1));
  EXPECT_EQ(a.inputs(4, 0), static_cast<double>(10 * c0 + 4));
}

TEST(RandomFeatureSplit, FourColumns) {
  Table t;
  t.columns = {"a", "b", "c", "d"};
  t.values = Matrix(2, 4);
  const Dataset ds = random_feature_split(t, 3);
  EXPECT_EQ(ds.input_dim(), 1u);
  EXPECT_EQ(ds.target_dim(), 3u);
  t.columns.pop_back();
  t.values = Matrix(2, 3);
  try {
    random_feature_split(t, 3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TooFewColumns);
  }
}

TEST(Csv, SplitAndParse) {
  EXPECT_EQ(csv::split_line("a,\"b,c\",d"), (std::vector<std::string>{"a", "b,c", "d"}));
  EXPECT_EQ(csv::parse_number(" 1.5e3 "), 1500.0);
  EXPECT_FALSE(csv::parse_number("abc").has_value());
  EXPECT_EQ(csv::format_number(0.1), "0.1");
}

TEST(Csv, NumericBlocks) {
  const std::string path = write_file("blocks.csv", "x,y\n1,2\n3,4\n\n5,6,7\n");
  const auto blocks = csv::read_numeric_blocks(path);
  ASSERT_EQ(blocks.size(), 2u);
  EXPECT_EQ(blocks[0], (Matrix{{1, 2}, {3, 4}}));
  EXPECT_EQ(blocks[1], (Matrix{{5, 6, 7}}));
}

TEST(WriteDataset, RoundTrip) {
  const Dataset ds = gen_univariate(UnivariateVariant::AbsX, 7, 17);
  const fs::path dir = scratch("written");
  fs::remove_all(dir);
  write_dataset(ds, dir);
  EXPECT_EQ(csv::read_numeric_table((dir / "inputs.csv").string()), ds.inputs);
  EXPECT_EQ(csv::read_numeric_table((dir / "targets.csv").string()), ds.targets);
  EXPECT_TRUE(fs::exists(dir / "meta.json"));
}
