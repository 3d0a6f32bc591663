#pragma once

// Per-sample training objectives with analytic gradients.
//
// Conventions: `residual` is r = y - y_hat; `grad_mean` is dLoss/dy_hat;
// `grad_cov` is dLoss/dSigma with the entries of Sigma treated as
// independent variables (so it is symmetric whenever Sigma is).

#include <cmath>
#include <cstddef>
#include <span>

#include "tictac/covheads.hpp"
#include "tictac/error.hpp"
#include "tictac/linalg.hpp"
#include "tictac/matrix.hpp"
#include "tictac/method.hpp"

namespace tictac {

struct LossEval {
  double value = 0.0;
  Vector grad_mean;
  SymMatrix grad_cov;  // full-covariance losses
  Vector grad_var;     // diagonal losses
};

/// log|Sigma| + r^T Sigma^-1 r.
inline LossEval nll_full(std::span<const double> residual, const SymMatrix& cov) {
  const std::size_t n = cov.dim();
  if (residual.size() != n) throw Error(ErrorCode::ShapeMismatch, "residual/cov dimension mismatch");
  const CholFactor f = cholesky_with_jitter(cov);
  const Vector w = solve(f, residual);
  LossEval out;
  out.value = log_det(f) + dot(residual, w);
  out.grad_mean.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.grad_mean[i] = -2.0 * w[i];
  SymMatrix g = inverse(f);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) g.set(i, j, g(i, j) - w[i] * w[j]);
  out.grad_cov = std::move(g);
  return out;
}

/// Per-dimension NLL scaled by a stop-gradient factor var^beta:
///   sum_i  [var_i^beta] (log var_i + r_i^2 / var_i)
/// The bracketed factor scales values and gradients but is not itself
/// differentiated.
inline LossEval beta_nll(std::span<const double> residual, std::span<const double> var, double beta) {
  const std::size_t n = residual.size();
  if (var.size() != n) throw Error(ErrorCode::ShapeMismatch, "residual/var length mismatch");
  if (!(beta >= 0.0 && beta <= 1.0)) throw Error(ErrorCode::InvalidArgument, "beta must lie in [0, 1]");
  LossEval out;
  out.grad_mean.resize(n);
  out.grad_var.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double v = var[i];
    if (!(v > 0.0)) throw Error(ErrorCode::NonPositiveVariance, "variance " + std::to_string(v));
    const double r = residual[i];
    const double weight = std::pow(v, beta);
    out.value += weight * (std::log(v) + r * r / v);
    // weight / v written as v^(beta - 1) so that beta = 1 gives exactly -2r.
    out.grad_mean[i] = -2.0 * r * std::pow(v, beta - 1.0);
    out.grad_var[i] = weight * (1.0 / v - r * r / (v * v));
  }
  return out;
}

/// Diagonal-covariance NLL: beta_nll with beta = 0.
inline LossEval nll_diag(std::span<const double> residual, std::span<const double> var) {
  return beta_nll(residual, var, 0.0);
}

/// Squared error for the mean plus NLL on the detached residual for Sigma.
/// The mean gradient comes from the squared-error term only.
inline LossEval faithful_loss(std::span<const double> residual, const SymMatrix& cov) {
  LossEval nll = nll_full(residual, cov);
  LossEval out;
  out.value = dot(residual, residual) + nll.value;
  out.grad_mean.resize(residual.size());
  for (std::size_t i = 0; i < residual.size(); ++i) out.grad_mean[i] = -2.0 * residual[i];
  out.grad_cov = std::move(nll.grad_cov);
  return out;
}

inline LossEval mse_loss(std::span<const double> residual) {
  LossEval out;
  out.value = dot(residual, residual);
  out.grad_mean.resize(residual.size());
  for (std::size_t i = 0; i < residual.size(); ++i) out.grad_mean[i] = -2.0 * residual[i];
  return out;
}

struct TicLossEval {
  LossEval nll;         // value, grad_mean, grad_cov of the NLL at Sigma_TIC
  double grad_k1 = 0.0;
  double grad_k2 = 0.0;
  SymMatrix grad_k3;    // dLoss/dk3, equal to grad_cov
  Vector grad_k3_raw;   // through assemble_pd
};

/// NLL under the TIC covariance. J and H are constants here: no gradient
/// reaches the mean network through Sigma.
inline TicLossEval tic_nll(std::span<const double> residual, const DiffEval& d, const TicParams& p) {
  TicLossEval out;
  out.nll = nll_full(residual, tic_covariance(d, p));
  const SymMatrix& g = out.nll.grad_cov;
  out.grad_k1 = frobenius_dot(g.matrix(), gram_rows(d.jacobian));
  out.grad_k2 = frobenius_dot(g.matrix(), hessian_gram(d.hessian).matrix());
  out.grad_k3 = g;
  if (!p.k3_raw.empty()) out.grad_k3_raw = assemble_pd_backward(p.k3_raw, g);
  return out;
}

/// Gradient of a per-sample loss with respect to the mean output and the
/// raw covariance-head output.
struct HeadLoss {
  double value = 0.0;
  Vector grad_mean;
  Vector grad_head;
};

/// tic_nll evaluated from the raw head, with gradients through the decode.
inline HeadLoss tic_nll_raw(std::span<const double> residual, const DiffEval& d, std::span<const double> raw_head) {
  const TicParams p = tic_head_decode(raw_head);
  TicLossEval t = tic_nll(residual, d, p);
  HeadLoss out;
  out.value = t.nll.value;
  out.grad_mean = std::move(t.nll.grad_mean);
  out.grad_head.resize(raw_head.size());
  out.grad_head[0] = t.grad_k1 * sigmoid(raw_head[0]);
  out.grad_head[1] = t.grad_k2 * sigmoid(raw_head[1]);
  std::copy(t.grad_k3_raw.begin(), t.grad_k3_raw.end(), out.grad_head.begin() + 2);
  return out;
}

/// Loss of `method` for one sample, differentiated w.r.t. y_hat and the raw
/// head. `d` is required for TIC only.
inline HeadLoss method_loss(const Method& method, std::span<const double> residual, std::span<const double> raw_head,
                            const DiffEval* d) {
  const std::size_t n = residual.size();
  if (raw_head.size() != head_width(method.kind, n))
    throw Error(ErrorCode::ShapeMismatch, "head width does not match method");
  HeadLoss out;
  switch (method.kind) {
    case MethodKind::Tic:
      if (!d) throw Error(ErrorCode::InvalidArgument, "TIC loss needs input derivatives");
      return tic_nll_raw(residual, *d, raw_head);
    case MethodKind::NllFull:
    case MethodKind::Faithful: {
      const SymMatrix cov = full_cholesky_covariance(raw_head);
      LossEval l = method.kind == MethodKind::NllFull ? nll_full(residual, cov) : faithful_loss(residual, cov);
      out.value = l.value;
      out.grad_mean = std::move(l.grad_mean);
      out.grad_head = assemble_pd_backward(raw_head, l.grad_cov);
      return out;
    }
    case MethodKind::NllDiag:
    case MethodKind::BetaNll: {
      const Vector var = diag_variances(raw_head);
      LossEval l = method.kind == MethodKind::NllDiag ? nll_diag(residual, var) : beta_nll(residual, var, method.beta);
      out.value = l.value;
      out.grad_mean = std::move(l.grad_mean);
      out.grad_head = diag_variances_backward(raw_head, l.grad_var);
      return out;
    }
    case MethodKind::Mse: {
      LossEval l = mse_loss(residual);
      out.value = l.value;
      out.grad_mean = std::move(l.grad_mean);
      return out;
    }
  }
  return out;
}

}  // namespace tictac
