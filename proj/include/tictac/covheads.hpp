#pragma once

// Predictive covariance heads. Each head maps the raw output vector of the
// covariance network to a positive definite matrix; the TIC head combines
// the mean network's input derivatives with three learned terms:
//
//   Sigma = k1 J J^T + k2 G(H) + k3,   G(H)_ij = Trace(H_i H_j)

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>

#include "tictac/error.hpp"
#include "tictac/linalg.hpp"
#include "tictac/matrix.hpp"
#include "tictac/mlp.hpp"

namespace tictac {

/// Decoded TIC head. `k3_raw` keeps the packed pre-activation factor so the
/// losses can chain gradients back through assemble_pd.
struct TicParams {
  double k1 = 0.0;
  double k2 = 0.0;
  SymMatrix k3;
  Vector k3_raw;
};

struct GaussianPrediction {
  Vector mean;
  SymMatrix cov;
};

/// Width of the raw TIC head for n targets.
constexpr std::size_t tic_head_width(std::size_t n) noexcept { return 2 + packed_size(n); }

/// Gram matrix of Hessian slices under the Frobenius inner product.
inline SymMatrix hessian_gram(const HessianTensor& h) {
  const std::size_t n = h.outputs();
  SymMatrix g(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) g.set(i, j, dot(h.slice(i), h.slice(j)));
  return g;
}

inline void require_tic_shapes(const DiffEval& d, const TicParams& p) {
  const std::size_t n = d.value.size();
  if (d.jacobian.rows() != n || d.hessian.outputs() != n || d.hessian.inputs() != d.jacobian.cols() ||
      p.k3.dim() != n)
    throw Error(ErrorCode::ShapeMismatch, "TIC shapes disagree");
}

/// k1 J J^T + k2 hessian_gram(H) + k3.
inline SymMatrix tic_covariance(const DiffEval& d, const TicParams& p) {
  require_tic_shapes(d, p);
  SymMatrix cov = p.k3;
  if (p.k1 != 0.0) cov += p.k1 * SymMatrix(gram_rows(d.jacobian));
  if (p.k2 != 0.0) cov += p.k2 * hessian_gram(d.hessian);
  return cov;
}

/// raw = [k1_raw, k2_raw, packed k3 factor...]; k1, k2 pass through softplus.
inline TicParams tic_head_decode(std::span<const double> raw) {
  if (raw.size() < 3) throw Error(ErrorCode::ShapeMismatch, "TIC head needs at least 3 outputs");
  TicParams p;
  p.k1 = softplus(raw[0]);
  p.k2 = softplus(raw[1]);
  p.k3_raw.assign(raw.begin() + 2, raw.end());
  p.k3 = assemble_pd(p.k3_raw, 0.0);
  return p;
}

/// diag((softplus(raw) + kMinDiag)^2)
inline SymMatrix diag_covariance(std::span<const double> raw) {
  Vector d(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const double s = softplus(raw[i]) + kMinDiag;
    d[i] = s * s;
  }
  return SymMatrix::diagonal(d);
}

/// Per-dimension variances of the diagonal head.
inline Vector diag_variances(std::span<const double> raw) {
  Vector d(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const double s = softplus(raw[i]) + kMinDiag;
    d[i] = s * s;
  }
  return d;
}

/// d variance_i / d raw_i for the diagonal head.
inline Vector diag_variances_backward(std::span<const double> raw, std::span<const double> grad_var) {
  Vector g(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) g[i] = grad_var[i] * 2.0 * (softplus(raw[i]) + kMinDiag) * sigmoid(raw[i]);
  return g;
}

/// Unconstrained full-covariance head used by the NLL and Faithful baselines.
inline SymMatrix full_cholesky_covariance(std::span<const double> raw) { return assemble_pd(raw, 0.0); }

/// Empirical covariance of J e + (1/2) e^T H e over e ~ N(0, sigma^2 I_m).
///
/// Returned as a 2n x 2n matrix over the stacked vector
/// [J e ; (1/2) e^T H_i e], so the linear block, the quadratic block and
/// their cross-covariance can be inspected separately. `total()` folds it
/// into the n x n covariance of the sum.
struct TaylorMonteCarlo {
  SymMatrix stacked;      // 2n x 2n
  Matrix standard_error;  // per-entry standard error of `stacked`
  std::size_t n = 0;
  std::size_t draws = 0;

  SymMatrix linear_block() const { return block(0, 0); }
  SymMatrix quadratic_block() const { return block(n, n); }
  Matrix cross_block() const {
    Matrix c(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) c(i, j) = stacked(i, n + j);
    return c;
  }
  SymMatrix total() const {
    Matrix t(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        t(i, j) = stacked(i, j) + stacked(n + i, n + j) + stacked(i, n + j) + stacked(n + i, j);
    return SymMatrix(std::move(t));
  }

 private:
  SymMatrix block(std::size_t r0, std::size_t c0) const {
    Matrix b(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) b(i, j) = stacked(r0 + i, c0 + j);
    return SymMatrix(std::move(b));
  }
};

inline TaylorMonteCarlo monte_carlo_taylor_cov(const DiffEval& d, double sigma, std::size_t n_draws,
                                               std::uint64_t seed = 0x7a11a5ULL) {
  if (!(sigma > 0.0)) throw Error(ErrorCode::InvalidArgument, "sigma must be positive");
  if (n_draws < 2) throw Error(ErrorCode::InvalidArgument, "need at least 2 draws");
  const std::size_t n = d.jacobian.rows();
  const std::size_t m = d.jacobian.cols();
  if (d.hessian.outputs() != n || d.hessian.inputs() != m) throw Error(ErrorCode::ShapeMismatch, "J/H shapes");

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, sigma);
  const std::size_t k = 2 * n;
  Matrix samples(n_draws, k);
  Vector eps(m), mean(k, 0.0);
  for (std::size_t t = 0; t < n_draws; ++t) {
    for (auto& e : eps) e = normal(rng);
    auto z = samples.row(t);
    for (std::size_t i = 0; i < n; ++i) {
      double lin = 0.0;
      for (std::size_t a = 0; a < m; ++a) lin += d.jacobian(i, a) * eps[a];
      double quad = 0.0;
      for (std::size_t a = 0; a < m; ++a) {
        double row = 0.0;
        for (std::size_t b = 0; b < m; ++b) row += d.hessian(i, a, b) * eps[b];
        quad += eps[a] * row;
      }
      z[i] = lin;
      z[n + i] = 0.5 * quad;
    }
    for (std::size_t i = 0; i < k; ++i) mean[i] += z[i];
  }
  const double count = static_cast<double>(n_draws);
  for (auto& v : mean) v /= count;

  // Sample covariance and, per entry, the standard error of that estimate
  // (spread of the centred products divided by sqrt(N)).
  Matrix cov(k, k), se(k, k);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      double s = 0.0, s2 = 0.0;
      for (std::size_t t = 0; t < n_draws; ++t) {
        const double p = (samples(t, i) - mean[i]) * (samples(t, j) - mean[j]);
        s += p;
        s2 += p * p;
      }
      const double c = s / (count - 1.0);
      const double var_p = std::max(0.0, (s2 - s * s / count) / (count - 1.0));
      cov(i, j) = cov(j, i) = c;
      se(i, j) = se(j, i) = std::sqrt(var_p / count);
    }
  return {SymMatrix(std::move(cov)), std::move(se), n, n_draws};
}

}  // namespace tictac
