#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>

#include "tictac/covheads.hpp"
#include "tictac/data.hpp"
#include "tictac/error.hpp"
#include "tictac/linalg.hpp"
#include "tictac/losses.hpp"
#include "tictac/method.hpp"
#include "tictac/mlp.hpp"

namespace tictac {

/// Task Agnostic Correlations for one sample.
///
/// Each dimension i in turn is hidden and the others observed at their true
/// values; the prediction for i is updated by Gaussian conditioning under
/// `cov`, and the absolute error of the update against y_i is recorded.
/// Returns the mean error over dimensions.
inline double tac(std::span<const double> y, std::span<const double> y_hat, const SymMatrix& cov) {
  const std::size_t n = cov.dim();
  if (n < 2) throw Error(ErrorCode::DimensionTooSmall, "TAC needs at least 2 target dimensions");
  if (y.size() != n || y_hat.size() != n) throw Error(ErrorCode::ShapeMismatch, "y / y_hat / cov dimensions");
  double total = 0.0;
  ConditionSpec spec;
  spec.observed_indices.reserve(n - 1);
  spec.observed_values.reserve(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    spec.observed_indices.clear();
    spec.observed_values.clear();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) {
        spec.observed_indices.push_back(j);
        spec.observed_values.push_back(y[j]);
      }
    const ConditionalGaussian c = condition_gaussian(y_hat, cov, spec);
    total += std::abs(c.mean[0] - y[i]);
  }
  return total / static_cast<double>(n);
}

struct MetricReport {
  std::optional<double> tac;  // absent for single-target data
  double mse = 0.0;           // mean over samples and target dims of r^2
  double mean_nll = 0.0;      // mean of log|Sigma| + r^T Sigma^-1 r
  std::size_t n_samples = 0;
};

/// Mean network output, its derivatives (TIC only) and predicted covariance
/// for one input.
struct SamplePrediction {
  Vector mean;
  SymMatrix cov;
};

inline SamplePrediction predict_sample(const Mlp& mean_net, const Method& method, const Mlp* cov_net,
                                       std::span<const double> x) {
  SamplePrediction p;
  const std::size_t n = mean_net.output_dim();
  if (method.kind == MethodKind::Mse) {
    p.mean = forward(mean_net, x);
    p.cov = SymMatrix::identity(n);
    return p;
  }
  if (!cov_net) throw Error(ErrorCode::InvalidArgument, "method needs a covariance network");
  const Vector raw = forward(*cov_net, x);
  if (needs_input_derivatives(method.kind)) {
    DiffEval d = forward_with_input_derivatives(mean_net, x);
    p.cov = predicted_covariance(method.kind, raw, &d, n);
    p.mean = std::move(d.value);
  } else {
    p.mean = forward(mean_net, x);
    p.cov = predicted_covariance(method.kind, raw, nullptr, n);
  }
  return p;
}

/// Averages TAC, squared error and NLL over every sample of `data`.
/// MSE-trained models are scored with identity covariance.
inline MetricReport evaluate(const Dataset& data, const Mlp& mean_net, const Method& method, const Mlp* cov_net) {
  if (data.size() == 0) throw Error(ErrorCode::InvalidArgument, "empty dataset");
  const std::size_t n = data.target_dim();
  MetricReport rep;
  rep.n_samples = data.size();
  double tac_sum = 0.0, se_sum = 0.0, nll_sum = 0.0;
  Vector r(n);
  for (std::size_t s = 0; s < data.size(); ++s) {
    const SamplePrediction p = predict_sample(mean_net, method, cov_net, data.inputs.row(s));
    const auto y = data.targets.row(s);
    for (std::size_t i = 0; i < n; ++i) r[i] = y[i] - p.mean[i];
    se_sum += dot(r, r);
    nll_sum += nll_full(r, p.cov).value;
    if (n >= 2) tac_sum += tac(y, p.mean, p.cov);
  }
  const double count = static_cast<double>(data.size());
  rep.mse = se_sum / (count * static_cast<double>(n));
  rep.mean_nll = nll_sum / count;
  if (n >= 2) rep.tac = tac_sum / count;
  return rep;
}

}  // namespace tictac
