#pragma once

// Reference implementations used to check the library. None of them call
// into linalg.hpp; they share only the Matrix container.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "tictac/matrix.hpp"
#include "tictac/mlp.hpp"

namespace oracle {

using tictac::Matrix;
using tictac::Vector;

// Gauss-Jordan with partial pivoting.
inline Matrix inverse(const Matrix& a) {
  const std::size_t n = a.rows();
  Matrix w = a, inv = Matrix::identity(n);
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t p = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(w(r, c)) > std::abs(w(p, c))) p = r;
    if (w(p, c) == 0.0) throw std::runtime_error("singular");
    for (std::size_t k = 0; k < n; ++k) {
      std::swap(w(c, k), w(p, k));
      std::swap(inv(c, k), inv(p, k));
    }
    const double piv = w(c, c);
    for (std::size_t k = 0; k < n; ++k) {
      w(c, k) /= piv;
      inv(c, k) /= piv;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == c) continue;
      const double f = w(r, c);
      if (f == 0.0) continue;
      for (std::size_t k = 0; k < n; ++k) {
        w(r, k) -= f * w(c, k);
        inv(r, k) -= f * inv(c, k);
      }
    }
  }
  return inv;
}

// Laplace expansion; fine up to n = 7 or so.
inline double cofactor_det(const Matrix& a) {
  const std::size_t n = a.rows();
  if (n == 1) return a(0, 0);
  if (n == 2) return a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0);
  double det = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    Matrix minor(n - 1, n - 1);
    for (std::size_t r = 1; r < n; ++r)
      for (std::size_t c = 0, cc = 0; c < n; ++c)
        if (c != j) minor(r - 1, cc++) = a(r, c);
    det += ((j % 2) ? -1.0 : 1.0) * a(0, j) * cofactor_det(minor);
  }
  return det;
}

// LU determinant for larger matrices.
inline double lu_det(Matrix a) {
  const std::size_t n = a.rows();
  double det = 1.0;
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t p = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(a(r, c)) > std::abs(a(p, c))) p = r;
    if (a(p, c) == 0.0) return 0.0;
    if (p != c) {
      for (std::size_t k = 0; k < n; ++k) std::swap(a(c, k), a(p, k));
      det = -det;
    }
    det *= a(c, c);
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = a(r, c) / a(c, c);
      for (std::size_t k = c; k < n; ++k) a(r, k) -= f * a(c, k);
    }
  }
  return det;
}

// Leave-one-out conditional means through the precision matrix:
// E[y_i | y_-i] = yhat_i - sum_{j != i} P_ij (y_j - yhat_j) / P_ii.
inline double tac(std::span<const double> y, std::span<const double> yhat, const Matrix& cov) {
  const std::size_t n = y.size();
  const Matrix p = inverse(cov);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double shift = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) shift += p(i, j) * (y[j] - yhat[j]);
    total += std::abs(yhat[i] - shift / p(i, i) - y[i]);
  }
  return total / static_cast<double>(n);
}

// Plain forward pass written out with loops, no tape.
inline Vector mlp_forward(const tictac::Mlp& net, std::span<const double> x) {
  Vector h(x.begin(), x.end());
  const auto& dims = net.layer_dims();
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const auto w = net.weights(l);
    const auto b = net.bias(l);
    Vector z(dims[l + 1]);
    for (std::size_t o = 0; o < dims[l + 1]; ++o) {
      double s = b[o];
      for (std::size_t i = 0; i < dims[l]; ++i) s += w[o * dims[l] + i] * h[i];
      if (l + 2 < dims.size()) s = net.activation() == tictac::Activation::Tanh ? std::tanh(s) : std::log1p(std::exp(s));
      z[o] = s;
    }
    h = std::move(z);
  }
  return h;
}

using VecFn = std::function<Vector(std::span<const double>)>;

// Central differences, J(i, a) = d f_i / d x_a.
inline Matrix fd_jacobian(const VecFn& f, std::span<const double> x, double h = 1e-6) {
  Vector xp(x.begin(), x.end());
  const std::size_t m = x.size();
  const std::size_t n = f(x).size();
  Matrix j(n, m);
  for (std::size_t a = 0; a < m; ++a) {
    xp[a] = x[a] + h;
    const Vector fp = f(xp);
    xp[a] = x[a] - h;
    const Vector fm = f(xp);
    xp[a] = x[a];
    for (std::size_t i = 0; i < n; ++i) j(i, a) = (fp[i] - fm[i]) / (2 * h);
  }
  return j;
}

// Second differences; H[i](a, b) = d^2 f_i / dx_a dx_b.
inline std::vector<Matrix> fd_hessian(const VecFn& f, std::span<const double> x, double h = 1e-4) {
  Vector xp(x.begin(), x.end());
  const std::size_t m = x.size();
  const Vector f0 = f(x);
  const std::size_t n = f0.size();
  std::vector<Matrix> out(n, Matrix(m, m));
  auto eval = [&](std::size_t a, double da, std::size_t b, double db) {
    xp[a] += da;
    xp[b] += db;
    Vector r = f(xp);
    xp[a] = x[a];
    xp[b] = x[b];
    return r;
  };
  for (std::size_t a = 0; a < m; ++a)
    for (std::size_t b = a; b < m; ++b) {
      Vector pp, pm, mp, mm;
      if (a == b) {
        pp = eval(a, h, a, 0.0);
        mm = eval(a, -h, a, 0.0);
        for (std::size_t i = 0; i < n; ++i) out[i](a, a) = (pp[i] - 2 * f0[i] + mm[i]) / (h * h);
        continue;
      }
      pp = eval(a, h, b, h);
      pm = eval(a, h, b, -h);
      mp = eval(a, -h, b, h);
      mm = eval(a, -h, b, -h);
      for (std::size_t i = 0; i < n; ++i) out[i](a, b) = out[i](b, a) = (pp[i] - pm[i] - mp[i] + mm[i]) / (4 * h * h);
    }
  return out;
}

// Central-difference gradient of a scalar function.
inline Vector fd_gradient(const std::function<double(std::span<const double>)>& f, std::span<const double> x,
                          double h = 1e-6) {
  Vector xp(x.begin(), x.end()), g(x.size());
  for (std::size_t a = 0; a < x.size(); ++a) {
    xp[a] = x[a] + h;
    const double fp = f(xp);
    xp[a] = x[a] - h;
    const double fm = f(xp);
    xp[a] = x[a];
    g[a] = (fp - fm) / (2 * h);
  }
  return g;
}

inline double sum_sq(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

// |a - b| / max(1, |b|), elementwise max.
inline double rel_err(std::span<const double> a, std::span<const double> b) {
  double e = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) e = std::max(e, std::abs(a[i] - b[i]) / std::max(1.0, std::abs(b[i])));
  return e;
}

inline Matrix random_spd(std::size_t n, std::mt19937_64& rng, double ridge = 0.5) {
  std::normal_distribution<double> nd;
  Matrix a(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a(i, j) = nd(rng);
  Matrix s(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double v = 0.0;
      for (std::size_t k = 0; k < n; ++k) v += a(i, k) * a(j, k);
      s(i, j) = v + (i == j ? ridge : 0.0);
    }
  return s;
}

inline Vector random_vector(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Vector v(n);
  for (auto& x : v) x = nd(rng);
  return v;
}

}  // namespace oracle
