#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include "tictac/experiment.hpp"

using namespace tictac;

namespace {

Dataset linear_dataset(std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Dataset ds;
  ds.inputs = Matrix(count, 2);
  ds.targets = Matrix(count, 2);
  for (std::size_t s = 0; s < count; ++s) {
    const double a = u(rng), b = u(rng);
    ds.inputs(s, 0) = a;
    ds.inputs(s, 1) = b;
    ds.targets(s, 0) = 0.8 * a - 0.5 * b;
    ds.targets(s, 1) = 0.3 * a + 0.6 * b + 0.1;
  }
  return ds;
}

std::vector<double> flat(std::span<const double> p) { return {p.begin(), p.end()}; }

TrainConfig small_config(MethodKind kind) {
  TrainConfig cfg;
  cfg.method = {kind, 0.5};
  cfg.mean_hidden = {8};
  cfg.cov_hidden = {8};
  cfg.epochs = 20;
  cfg.batch_size = 16;
  cfg.seed = 5;
  return cfg;
}

}  // namespace

TEST(Seeds, DerivedStreamsDiffer) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t s : {0ull, 1ull, 2ull})
    for (std::uint64_t k : {1ull, 2ull, 3ull, 4ull}) seen.insert(derive_seed(s, k));
  EXPECT_EQ(seen.size(), 12u);
  EXPECT_EQ(derive_seed(7, 3), derive_seed(7, 3));
}

TEST(BatchSchedule, PartitionsEveryEpoch) {
  const BatchSchedule s = make_batch_schedule(103, 10, 4, 1);
  ASSERT_EQ(s.size(), 4u);
  for (const auto& epoch : s) {
    ASSERT_EQ(epoch.size(), 11u);
    EXPECT_EQ(epoch.back().size(), 3u);
    std::vector<std::size_t> all;
    for (const auto& b : epoch) all.insert(all.end(), b.begin(), b.end());
    std::sort(all.begin(), all.end());
    for (std::size_t i = 0; i < all.size(); ++i) EXPECT_EQ(all[i], i);
  }
  EXPECT_NE(s[0], s[1]);
}

TEST(BatchSchedule, Remainder) {
  const BatchSchedule s = make_batch_schedule(5, 2, 1, 9);
  ASSERT_EQ(s[0].size(), 3u);
  EXPECT_EQ(s[0][0].size(), 2u);
  EXPECT_EQ(s[0][2].size(), 1u);
}

TEST(BatchSchedule, SeedDetermined) {
  EXPECT_EQ(make_batch_schedule(50, 7, 3, 4), make_batch_schedule(50, 7, 3, 4));
  EXPECT_NE(make_batch_schedule(50, 7, 3, 4), make_batch_schedule(50, 7, 3, 5));
  EXPECT_THROW(make_batch_schedule(5, 0, 1, 1), Error);
}

TEST(Adam, HandComputedSteps) {
  Adam opt(1, {0.1, 0.9, 0.999, 1e-8});
  Vector p{1.0};
  const Vector g{1.0};
  opt.step(p, g);
  // Bias correction makes the first step exactly lr * g / (|g| + eps).
  EXPECT_NEAR(p[0], 1.0 - 0.1 / (1.0 + 1e-8), 1e-15);
  opt.step(p, g);
  EXPECT_NEAR(p[0], 1.0 - 0.2 / (1.0 + 1e-8), 1e-14);
  EXPECT_EQ(opt.steps(), 2u);
  Vector wrong(2);
  EXPECT_THROW(opt.step(wrong, wrong), Error);
}

TEST(Adam, SignInvariantToGradientScale) {
  Adam a(2, {}), b(2, {});
  Vector pa{0.0, 0.0}, pb{0.0, 0.0};
  a.step(pa, Vector{2.0, -3.0});
  b.step(pb, Vector{200.0, -300.0});
  EXPECT_NEAR(pa[0], pb[0], 1e-10);
  EXPECT_NEAR(pa[1], pb[1], 1e-10);
  EXPECT_LT(pa[0], 0.0);
  EXPECT_GT(pa[1], 0.0);
}

TEST(StepDecay, Boundary) {
  const StepDecay d;
  EXPECT_EQ(d.rate(1e-3, 74, 100), 1e-3);
  EXPECT_DOUBLE_EQ(d.rate(1e-3, 75, 100), 1e-4);
  EXPECT_DOUBLE_EQ(d.rate(1e-3, 99, 100), 1e-4);
  // floor(0.75 * 1) = 0: a single-epoch run trains entirely at the decayed rate.
  EXPECT_DOUBLE_EQ(d.rate(1.0, 0, 1), 0.1);
  EXPECT_EQ(d.rate(1.0, 0, 2), 1.0);
}

TEST(TrainConfig, Validation) {
  TrainConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.epochs = 0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = {};
  cfg.adam.learning_rate = 0.0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = {};
  cfg.method.beta = 1.5;
  EXPECT_THROW(cfg.validate(), Error);
}

TEST(Train, MseFitsNoiselessLinearData) {
  const Dataset ds = linear_dataset(256, 1);
  TrainConfig cfg = small_config(MethodKind::Mse);
  cfg.epochs = 300;
  cfg.adam.learning_rate = 1e-2;
  const TrainedPair tp = train(cfg, ds);
  EXPECT_FALSE(tp.cov_net.has_value());
  EXPECT_LE(evaluate(ds, tp.mean_net, cfg.method, nullptr).mse, 1e-3);
  EXPECT_LT(tp.loss_trace.back(), tp.loss_trace.front());
}

TEST(Train, BitwiseDeterministic) {
  const Dataset ds = linear_dataset(64, 2);
  for (MethodKind k : {MethodKind::Tic, MethodKind::BetaNll}) {
    const TrainConfig cfg = small_config(k);
    const TrainedPair a = train(cfg, ds), b = train(cfg, ds);
    EXPECT_EQ(flat(a.mean_net.parameters()), flat(b.mean_net.parameters()));
    EXPECT_EQ(flat(a.cov_net->parameters()), flat(b.cov_net->parameters()));
    EXPECT_EQ(a.loss_trace, b.loss_trace);
  }
}

TEST(Train, ThreadedMatchesItselfAcrossRuns) {
  const Dataset ds = linear_dataset(64, 3);
  TrainConfig cfg = small_config(MethodKind::NllFull);
  cfg.threads = 3;
  const TrainedPair a = train(cfg, ds), b = train(cfg, ds);
  EXPECT_EQ(flat(a.mean_net.parameters()), flat(b.mean_net.parameters()));
  EXPECT_EQ(a.loss_trace, b.loss_trace);
}

TEST(Train, TicShrinksCovarianceOnConstantTarget) {
  Dataset ds = linear_dataset(128, 4);
  for (std::size_t s = 0; s < ds.size(); ++s) ds.targets(s, 0) = ds.targets(s, 1) = 0.5;
  TrainConfig cfg = small_config(MethodKind::Tic);
  cfg.epochs = 200;
  cfg.adam.learning_rate = 1e-2;
  const auto [mean0, cov0] = initial_networks(cfg, 2, 2);
  const TrainedPair tp = train(cfg, ds);
  const Vector x{0.2, -0.3};
  const SymMatrix before = predict_sample(mean0, cfg.method, &*cov0, x).cov;
  const SymMatrix after = predict_sample(tp.mean_net, cfg.method, &*tp.cov_net, x).cov;
  for (std::size_t i = 0; i < 2; ++i) EXPECT_LT(after(i, i), before(i, i) / 10) << i;
  EXPECT_LT(tp.loss_trace.back(), tp.loss_trace.front());
}

TEST(Train, NonFiniteLossIsReported) {
  Dataset ds = linear_dataset(8, 5);
  for (std::size_t s = 0; s < ds.size(); ++s) ds.targets(s, 0) = 1e200;
  try {
    train(small_config(MethodKind::Mse), ds);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DivergedLoss);
  }
}

TEST(Experiment, OneTrialTwoMethodsShareData) {
  ExperimentSpec spec;
  spec.kind = ExperimentKind::Multivariate;
  spec.methods = {{MethodKind::Tic, 0.5}, {MethodKind::NllDiag, 0.5}};
  spec.samples = 200;
  spec.seed = 3;
  spec.train.epochs = 2;
  spec.train.mean_hidden = spec.train.cov_hidden = {8};
  const ExperimentOutcome out = run_trials(spec);
  ASSERT_EQ(out.rows.size(), 2u);
  EXPECT_TRUE(out.failures.empty());
  EXPECT_EQ(out.rows[0].dataset, out.rows[1].dataset);
  EXPECT_EQ(out.rows[0].seed, out.rows[1].seed);
  EXPECT_EQ(out.rows[0].seed, trial_seed(3, 0));
  EXPECT_EQ(out.rows[0].dim, 4u);
  EXPECT_TRUE(out.rows[0].tac.has_value());
  ASSERT_EQ(out.artifacts.size(), 1u);
  EXPECT_EQ(out.artifacts[0].loss_traces.size(), 2u);

  std::ostringstream csv;
  write_results_csv(csv, out.rows, false);
  EXPECT_EQ(csv.str().substr(0, csv.str().find('\n')), kResultsHeader);
}

TEST(Experiment, AggregateIsTrialMean) {
  std::vector<TrialResult> rows(3);
  const double tacs[] = {0.2, 0.4, 0.9};
  for (std::size_t t = 0; t < 3; ++t) {
    rows[t].method = "tic";
    rows[t].dataset = "multivariate_d4";
    rows[t].dim = 4;
    rows[t].trial = t;
    rows[t].tac = tacs[t];
    rows[t].mse = static_cast<double>(t);
    rows[t].mean_nll = -1.0;
  }
  rows.push_back(rows[0]);
  rows.back().method = "nll";
  const auto agg = aggregate(rows);
  ASSERT_EQ(agg.size(), 2u);
  const auto& tic = agg[0].method == "tic" ? agg[0] : agg[1];
  EXPECT_EQ(tic.trials, 3u);
  EXPECT_NEAR(*tic.tac, 0.5, 1e-15);
  EXPECT_NEAR(tic.mse, 1.0, 1e-15);
  EXPECT_EQ(tic.mean_nll, -1.0);
}

TEST(Experiment, Pearson) {
  EXPECT_NEAR(pearson(Vector{1, 2, 3}, Vector{2, 4, 6}), 1.0, 1e-15);
  EXPECT_NEAR(pearson(Vector{1, 2, 3}, Vector{3, 2, 1}), -1.0, 1e-15);
}

TEST(Experiment, SpecValidation) {
  ExperimentSpec spec;
  EXPECT_THROW(spec.validate(), Error);
  spec.methods = all_methods();
  spec.trials = 0;
  EXPECT_THROW(spec.validate(), Error);
}
