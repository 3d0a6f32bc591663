#pragma once

// Dense symmetric linear algebra used by the covariance heads, the losses
// and the TAC metric: Cholesky, solves, log-determinants, a positive
// definite parameterization and Gaussian conditioning.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "tictac/error.hpp"
#include "tictac/matrix.hpp"

namespace tictac {

/// Floor added to every softplus-mapped diagonal entry.
inline constexpr double kMinDiag = 1e-6;

/// Jitter retries for near-singular blocks: up to this many additions of
/// kJitterScale * mean(diag).
inline constexpr int kJitterRetries = 3;
inline constexpr double kJitterScale = 1e-6;

inline double softplus(double x) noexcept {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Number of entries in a packed lower triangle of an n x n matrix.
constexpr std::size_t packed_size(std::size_t n) noexcept { return n * (n + 1) / 2; }

/// Inverse of packed_size; throws if `len` is not triangular.
inline std::size_t dim_from_packed(std::size_t len) {
  std::size_t n = 0;
  while (packed_size(n) < len) ++n;
  if (packed_size(n) != len || n == 0)
    throw Error(ErrorCode::ShapeMismatch, "packed length " + std::to_string(len) + " is not n(n+1)/2");
  return n;
}

/// Lower-triangular factor with strictly positive diagonal.
class CholFactor {
 public:
  std::size_t dim() const noexcept { return lower_.rows(); }
  const Matrix& lower() const noexcept { return lower_; }

  /// lower * lower^T
  SymMatrix reconstruct() const { return SymMatrix(gram_rows(lower_)); }

 private:
  explicit CholFactor(Matrix lower) : lower_(std::move(lower)) {}
  friend CholFactor cholesky(const SymMatrix& m);

  Matrix lower_;
};

/// Throws NotPositiveDefinite when a pivot is not strictly positive.
inline CholFactor cholesky(const SymMatrix& m) {
  const std::size_t n = m.dim();
  if (n == 0) throw Error(ErrorCode::ShapeMismatch, "cholesky of empty matrix");
  Matrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double d = m(j, j);
    auto lj = l.row(j);
    for (std::size_t k = 0; k < j; ++k) d -= lj[k] * lj[k];
    if (!(d > 0.0) || !std::isfinite(d))
      throw Error(ErrorCode::NotPositiveDefinite,
                  "pivot " + std::to_string(j) + " = " + std::to_string(d));
    const double ljj = std::sqrt(d);
    lj[j] = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      auto li = l.row(i);
      double s = m(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= li[k] * lj[k];
      li[j] = s / ljj;
    }
  }
  return CholFactor(std::move(l));
}

/// Cholesky with the jitter-retry policy. `jitter_added` receives the total
/// diagonal shift that was needed (0 when the first attempt succeeds).
inline CholFactor cholesky_with_jitter(SymMatrix m, ErrorCode on_failure = ErrorCode::NotPositiveDefinite,
                                       double* jitter_added = nullptr) {
  const double scale = m.mean_diagonal() > 0.0 ? m.mean_diagonal() : 1.0;
  double total = 0.0;
  for (int attempt = 0;; ++attempt) {
    try {
      CholFactor f = cholesky(m);
      if (jitter_added) *jitter_added = total;
      return f;
    } catch (const Error& e) {
      if (attempt >= kJitterRetries) throw Error(on_failure, e.what());
      m.add_to_diagonal(kJitterScale * scale);
      total += kJitterScale * scale;
    }
  }
}

inline double log_det(const CholFactor& f) {
  double s = 0.0;
  for (std::size_t i = 0; i < f.dim(); ++i) s += std::log(f.lower()(i, i));
  return 2.0 * s;
}

/// Solves L y = b in place.
inline void forward_substitute(const Matrix& l, std::span<double> b) {
  for (std::size_t i = 0; i < l.rows(); ++i) {
    auto li = l.row(i);
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= li[k] * b[k];
    b[i] = s / li[i];
  }
}

/// Solves L^T x = y in place.
inline void back_substitute(const Matrix& l, std::span<double> y) {
  const std::size_t n = l.rows();
  for (std::size_t ii = n; ii-- > 0;) {
    double s = y[ii];
    for (std::size_t k = ii + 1; k < n; ++k) s -= l(k, ii) * y[k];
    y[ii] = s / l(ii, ii);
  }
}

inline Vector solve(const CholFactor& f, std::span<const double> b) {
  if (b.size() != f.dim()) throw Error(ErrorCode::ShapeMismatch, "solve: rhs length");
  Vector x(b.begin(), b.end());
  forward_substitute(f.lower(), x);
  back_substitute(f.lower(), x);
  return x;
}

/// Column-wise solve for a matrix right-hand side.
inline Matrix solve(const CholFactor& f, const Matrix& b) {
  if (b.rows() != f.dim()) throw Error(ErrorCode::ShapeMismatch, "solve: rhs rows");
  Matrix x(b.rows(), b.cols());
  Vector col(b.rows());
  for (std::size_t j = 0; j < b.cols(); ++j) {
    for (std::size_t i = 0; i < b.rows(); ++i) col[i] = b(i, j);
    forward_substitute(f.lower(), col);
    back_substitute(f.lower(), col);
    for (std::size_t i = 0; i < b.rows(); ++i) x(i, j) = col[i];
  }
  return x;
}

inline SymMatrix inverse(const CholFactor& f) {
  return SymMatrix(solve(f, Matrix::identity(f.dim())));
}

/// Lower-triangular matrix from a packed row-major lower triangle
/// ((0,0), (1,0), (1,1), (2,0), ...). Diagonal entries pass through
/// softplus(.) + kMinDiag; off-diagonals are used as-is.
inline Matrix lower_from_raw(std::span<const double> raw) {
  const std::size_t n = dim_from_packed(raw.size());
  Matrix l(n, n);
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j, ++k) l(i, j) = (i == j) ? softplus(raw[k]) + kMinDiag : raw[k];
  return l;
}

/// L L^T + jitter * I where L = lower_from_raw(raw). Large off-diagonals
/// next to a floored diagonal can make the product lose definiteness to
/// rounding; the retry policy then adds the smallest shift that factorizes.
/// Backward passes treat that shift as a constant.
inline SymMatrix assemble_pd(std::span<const double> raw, double jitter = 0.0) {
  SymMatrix m(gram_rows(lower_from_raw(raw)));
  if (jitter != 0.0) m.add_to_diagonal(jitter);
  double shift = 0.0;
  cholesky_with_jitter(m, ErrorCode::NotPositiveDefinite, &shift);
  if (shift != 0.0) m.add_to_diagonal(shift);
  return m;
}

/// Back-propagates dLoss/dSigma (symmetric, entries treated as independent)
/// through Sigma = L L^T with L = lower_from_raw(raw). Returns dLoss/draw.
inline Vector assemble_pd_backward(std::span<const double> raw, const SymMatrix& grad_sigma) {
  const Matrix l = lower_from_raw(raw);
  const std::size_t n = l.rows();
  if (grad_sigma.dim() != n) throw Error(ErrorCode::ShapeMismatch, "assemble_pd_backward dims");
  // dL = 2 G L restricted to the lower triangle.
  const Matrix gl = matmul(grad_sigma.matrix(), l);
  Vector out(raw.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j, ++k) {
      const double g = 2.0 * gl(i, j);
      out[k] = (i == j) ? g * sigmoid(raw[k]) : g;
    }
  return out;
}

/// Observed coordinates for Gaussian conditioning.
struct ConditionSpec {
  std::vector<std::size_t> observed_indices;
  Vector observed_values;
};

struct ConditionalGaussian {
  std::vector<std::size_t> hidden_indices;
  Vector mean;
  SymMatrix cov;
};

inline std::vector<std::size_t> hidden_complement(std::size_t dim, const ConditionSpec& spec) {
  if (spec.observed_indices.size() != spec.observed_values.size())
    throw Error(ErrorCode::ShapeMismatch, "observed indices/values length mismatch");
  std::vector<char> seen(dim, 0);
  for (std::size_t idx : spec.observed_indices) {
    if (idx >= dim) throw Error(ErrorCode::InvalidArgument, "observed index out of range");
    if (seen[idx]) throw Error(ErrorCode::InvalidArgument, "duplicate observed index");
    seen[idx] = 1;
  }
  std::vector<std::size_t> hidden;
  for (std::size_t i = 0; i < dim; ++i)
    if (!seen[i]) hidden.push_back(i);
  if (hidden.empty()) throw Error(ErrorCode::InvalidArgument, "every dimension is observed");
  return hidden;
}

/// Distribution of the hidden coordinates given the observed ones:
///   mean_h + S12 S22^-1 (y_o - mean_o),   S11 - S12 S22^-1 S21.
/// With an empty observation set this is the hidden marginal.
inline ConditionalGaussian condition_gaussian(std::span<const double> mean, const SymMatrix& cov,
                                              const ConditionSpec& spec) {
  const std::size_t n = cov.dim();
  if (mean.size() != n) throw Error(ErrorCode::ShapeMismatch, "mean/cov dimension mismatch");
  ConditionalGaussian out;
  out.hidden_indices = hidden_complement(n, spec);
  const auto& hid = out.hidden_indices;
  const auto& obs = spec.observed_indices;
  const std::size_t nh = hid.size();
  const std::size_t no = obs.size();

  out.mean.resize(nh);
  Matrix s11(nh, nh);
  for (std::size_t a = 0; a < nh; ++a) {
    out.mean[a] = mean[hid[a]];
    for (std::size_t b = 0; b < nh; ++b) s11(a, b) = cov(hid[a], hid[b]);
  }
  if (no == 0) {
    out.cov = SymMatrix(std::move(s11));
    return out;
  }

  SymMatrix s22(no);
  for (std::size_t a = 0; a < no; ++a)
    for (std::size_t b = 0; b <= a; ++b) s22.set(a, b, cov(obs[a], obs[b]));
  const CholFactor f = cholesky_with_jitter(std::move(s22), ErrorCode::SingularObservedBlock);

  Vector delta(no);
  for (std::size_t a = 0; a < no; ++a) delta[a] = spec.observed_values[a] - mean[obs[a]];
  const Vector w = solve(f, delta);

  // S21 is no x nh; K^T = S22^-1 S21.
  Matrix s21(no, nh);
  for (std::size_t a = 0; a < no; ++a)
    for (std::size_t b = 0; b < nh; ++b) s21(a, b) = cov(obs[a], hid[b]);
  const Matrix kt = solve(f, s21);

  for (std::size_t b = 0; b < nh; ++b) {
    double s = 0.0;
    for (std::size_t a = 0; a < no; ++a) s += s21(a, b) * w[a];
    out.mean[b] += s;
  }
  for (std::size_t i = 0; i < nh; ++i)
    for (std::size_t j = 0; j < nh; ++j) {
      double s = 0.0;
      for (std::size_t a = 0; a < no; ++a) s += s21(a, i) * kt(a, j);
      s11(i, j) -= s;
    }
  out.cov = SymMatrix(std::move(s11));
  return out;
}

/// Smallest eigenvalue by bisection on the success of a shifted Cholesky,
/// bracketed by Gershgorin discs. Absolute tolerance `tol`.
inline double min_eigenvalue(const SymMatrix& m, double tol = 1e-10) {
  const std::size_t n = m.dim();
  if (n == 0) throw Error(ErrorCode::ShapeMismatch, "min_eigenvalue of empty matrix");
  double lo = std::numeric_limits<double>::infinity();
  // Any diagonal entry is an upper bound on the smallest eigenvalue.
  double hi = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    double radius = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) radius += std::abs(m(i, j));
    lo = std::min(lo, m(i, i) - radius);
    hi = std::min(hi, m(i, i));
  }

  auto shifted_pd = [&](double shift) {
    SymMatrix s = m;
    s.add_to_diagonal(-shift);
    try {
      (void)cholesky(s);
      return true;
    } catch (const Error&) {
      return false;
    }
  };
  if (hi - lo <= tol) return 0.5 * (lo + hi);
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    if (mid == lo || mid == hi) break;
    if (shifted_pd(mid))
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace tictac
