#pragma once

// Fully-connected networks with
//  * reverse-mode gradients with respect to the parameters, and
//  * forward-mode propagation of the input Jacobian and input Hessian.
//
// Parameters live in one flat buffer, layer after layer, each layer stored
// as its weight matrix (row-major, out x in) followed by its bias. The
// optimizer and the on-disk format both work directly on that buffer.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "tictac/error.hpp"
#include "tictac/linalg.hpp"
#include "tictac/matrix.hpp"

namespace tictac {

enum class Activation { Tanh, Softplus };

inline const char* to_string(Activation a) { return a == Activation::Tanh ? "tanh" : "softplus"; }

inline Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "softplus") return Activation::Softplus;
  throw Error(ErrorCode::InvalidArgument, "unknown activation '" + s + "'");
}

/// Value and first two derivatives of an activation at one point.
struct ActivationJet {
  double value;
  double d1;
  double d2;
};

inline ActivationJet activation_jet(Activation a, double u) noexcept {
  if (a == Activation::Tanh) {
    const double s = std::tanh(u);
    const double d1 = 1.0 - s * s;
    return {s, d1, -2.0 * s * d1};
  }
  const double sg = sigmoid(u);
  return {softplus(u), sg, sg * (1.0 - sg)};
}

class Mlp {
 public:
  Mlp() = default;

  /// Zero-initialized network. Throws InvalidArchitecture on fewer than two
  /// dims or any dim < 1.
  Mlp(std::vector<std::size_t> layer_dims, Activation activation)
      : dims_(std::move(layer_dims)), activation_(activation) {
    if (dims_.size() < 2) throw Error(ErrorCode::InvalidArchitecture, "need at least input and output dims");
    for (std::size_t d : dims_)
      if (d < 1) throw Error(ErrorCode::InvalidArchitecture, "layer dim must be >= 1");
    offsets_.resize(num_layers());
    std::size_t off = 0;
    for (std::size_t l = 0; l < num_layers(); ++l) {
      offsets_[l] = off;
      off += dims_[l + 1] * dims_[l] + dims_[l + 1];
    }
    params_.assign(off, 0.0);
  }

  const std::vector<std::size_t>& layer_dims() const noexcept { return dims_; }
  Activation activation() const noexcept { return activation_; }
  std::size_t num_layers() const noexcept { return dims_.size() - 1; }
  std::size_t input_dim() const noexcept { return dims_.front(); }
  std::size_t output_dim() const noexcept { return dims_.back(); }
  std::size_t parameter_count() const noexcept { return params_.size(); }

  std::span<double> parameters() noexcept { return params_; }
  std::span<const double> parameters() const noexcept { return params_; }

  /// Row-major (out x in) weights of layer l.
  std::span<double> weights(std::size_t l) noexcept {
    return {params_.data() + offsets_[l], dims_[l + 1] * dims_[l]};
  }
  std::span<const double> weights(std::size_t l) const noexcept {
    return {params_.data() + offsets_[l], dims_[l + 1] * dims_[l]};
  }
  std::span<double> bias(std::size_t l) noexcept {
    return {params_.data() + offsets_[l] + dims_[l + 1] * dims_[l], dims_[l + 1]};
  }
  std::span<const double> bias(std::size_t l) const noexcept {
    return {params_.data() + offsets_[l] + dims_[l + 1] * dims_[l], dims_[l + 1]};
  }

  /// Offset of layer l's block inside the flat parameter buffer.
  std::size_t layer_offset(std::size_t l) const noexcept { return offsets_[l]; }

  friend bool operator==(const Mlp&, const Mlp&) = default;

 private:
  std::vector<std::size_t> dims_;
  Activation activation_ = Activation::Tanh;
  std::vector<std::size_t> offsets_;
  Vector params_;
};

/// Gradient buffer congruent with an Mlp's flat parameters.
struct ParamGrads {
  Vector values;

  ParamGrads() = default;
  explicit ParamGrads(const Mlp& net) : values(net.parameter_count(), 0.0) {}

  void zero() noexcept { std::fill(values.begin(), values.end(), 0.0); }
  ParamGrads& operator+=(const ParamGrads& o) {
    if (o.values.size() != values.size()) throw Error(ErrorCode::ShapeMismatch, "ParamGrads size");
    for (std::size_t i = 0; i < values.size(); ++i) values[i] += o.values[i];
    return *this;
  }
  ParamGrads& operator*=(double s) noexcept {
    for (auto& v : values) v *= s;
    return *this;
  }
};

/// Glorot-uniform weights, zero biases. Deterministic given the seed.
inline Mlp init_mlp(std::vector<std::size_t> layer_dims, Activation activation, std::uint64_t seed) {
  Mlp net(std::move(layer_dims), activation);
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const double fan = static_cast<double>(net.layer_dims()[l] + net.layer_dims()[l + 1]);
    const double limit = std::sqrt(6.0 / fan);
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (double& w : net.weights(l)) w = dist(rng);
  }
  return net;
}

/// Intermediate values kept for the reverse pass.
struct ForwardTape {
  std::vector<Vector> layer_inputs;  // input to each affine layer
  std::vector<Vector> act_slopes;    // activation derivative per hidden layer
  Vector output;
};

namespace detail {

inline void affine(const Mlp& net, std::size_t l, std::span<const double> in, Vector& out) {
  const std::size_t rows = net.layer_dims()[l + 1];
  const std::size_t cols = net.layer_dims()[l];
  const auto w = net.weights(l);
  const auto b = net.bias(l);
  out.resize(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    double s = b[i];
    const double* wi = w.data() + i * cols;
    for (std::size_t j = 0; j < cols; ++j) s += wi[j] * in[j];
    out[i] = s;
  }
}

/// (rows x cols row-major weights) * b, four output rows at a time.
inline Matrix matmul_rows(std::span<const double> w, std::size_t rows, std::size_t cols, const Matrix& b) {
  const std::size_t width = b.cols();
  Matrix c(rows, width);
  std::size_t i = 0;
  for (; i + 4 <= rows; i += 4) {
    double* c0 = c.row(i).data();
    double* c1 = c0 + width;
    double* c2 = c1 + width;
    double* c3 = c2 + width;
    const double* w0 = w.data() + i * cols;
    const double* w1 = w0 + cols;
    const double* w2 = w1 + cols;
    const double* w3 = w2 + cols;
    for (std::size_t j = 0; j < cols; ++j) {
      const double* bj = b.row(j).data();
      const double a0 = w0[j], a1 = w1[j], a2 = w2[j], a3 = w3[j];
      for (std::size_t p = 0; p < width; ++p) {
        const double v = bj[p];
        c0[p] += a0 * v;
        c1[p] += a1 * v;
        c2[p] += a2 * v;
        c3[p] += a3 * v;
      }
    }
  }
  for (; i < rows; ++i) {
    double* ci = c.row(i).data();
    const double* wi = w.data() + i * cols;
    for (std::size_t j = 0; j < cols; ++j) {
      const double* bj = b.row(j).data();
      const double a = wi[j];
      for (std::size_t p = 0; p < width; ++p) ci[p] += a * bj[p];
    }
  }
  return c;
}

inline void require_input(const Mlp& net, std::span<const double> x) {
  if (x.size() != net.input_dim())
    throw Error(ErrorCode::ShapeMismatch, "input length " + std::to_string(x.size()) + " != " +
                                              std::to_string(net.input_dim()));
}

}  // namespace detail

inline Vector forward(const Mlp& net, std::span<const double> x, ForwardTape* tape = nullptr) {
  detail::require_input(net, x);
  if (tape) {
    tape->layer_inputs.assign(net.num_layers(), {});
    tape->act_slopes.assign(net.num_layers() - 1, {});
  }
  Vector cur(x.begin(), x.end());
  Vector next;
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    if (tape) tape->layer_inputs[l] = cur;
    detail::affine(net, l, cur, next);
    if (l + 1 < net.num_layers()) {
      if (tape) tape->act_slopes[l].resize(next.size());
      for (std::size_t k = 0; k < next.size(); ++k) {
        const ActivationJet a = activation_jet(net.activation(), next[k]);
        next[k] = a.value;
        if (tape) tape->act_slopes[l][k] = a.d1;
      }
    }
    std::swap(cur, next);
  }
  if (tape) tape->output = cur;
  return cur;
}

/// Adds d(upstream . output)/d(params) into `grads`.
inline void accumulate_param_grads(const Mlp& net, const ForwardTape& tape, std::span<const double> upstream,
                                   ParamGrads& grads) {
  if (upstream.size() != net.output_dim()) throw Error(ErrorCode::ShapeMismatch, "upstream length");
  if (grads.values.size() != net.parameter_count()) throw Error(ErrorCode::ShapeMismatch, "grads size");
  Vector delta(upstream.begin(), upstream.end());
  Vector prev;
  for (std::size_t l = net.num_layers(); l-- > 0;) {
    const std::size_t rows = net.layer_dims()[l + 1];
    const std::size_t cols = net.layer_dims()[l];
    const auto& in = tape.layer_inputs[l];
    double* gw = grads.values.data() + net.layer_offset(l);
    double* gb = gw + rows * cols;
    for (std::size_t i = 0; i < rows; ++i) {
      const double di = delta[i];
      gb[i] += di;
      if (di == 0.0) continue;
      double* gwi = gw + i * cols;
      for (std::size_t j = 0; j < cols; ++j) gwi[j] += di * in[j];
    }
    if (l == 0) break;
    const auto w = net.weights(l);
    prev.assign(cols, 0.0);
    for (std::size_t i = 0; i < rows; ++i) {
      const double di = delta[i];
      if (di == 0.0) continue;
      const double* wi = w.data() + i * cols;
      for (std::size_t j = 0; j < cols; ++j) prev[j] += wi[j] * di;
    }
    const auto& slope = tape.act_slopes[l - 1];
    for (std::size_t j = 0; j < cols; ++j) prev[j] *= slope[j];
    std::swap(delta, prev);
  }
}

/// Reverse-mode gradient of upstream . f(x) with respect to the parameters.
inline ParamGrads backprop_params(const Mlp& net, std::span<const double> x, std::span<const double> upstream) {
  ForwardTape tape;
  forward(net, x, &tape);
  ParamGrads g(net);
  accumulate_param_grads(net, tape, upstream, g);
  return g;
}

/// Per-output input Hessians, n slices of m x m, stored contiguously.
class HessianTensor {
 public:
  HessianTensor() = default;
  HessianTensor(std::size_t outputs, std::size_t inputs)
      : n_(outputs), m_(inputs), data_(outputs * inputs * inputs, 0.0) {}

  std::size_t outputs() const noexcept { return n_; }
  std::size_t inputs() const noexcept { return m_; }

  double& operator()(std::size_t i, std::size_t a, std::size_t b) noexcept { return data_[(i * m_ + a) * m_ + b]; }
  double operator()(std::size_t i, std::size_t a, std::size_t b) const noexcept {
    return data_[(i * m_ + a) * m_ + b];
  }

  std::span<const double> slice(std::size_t i) const noexcept { return {data_.data() + i * m_ * m_, m_ * m_}; }
  std::span<double> slice(std::size_t i) noexcept { return {data_.data() + i * m_ * m_, m_ * m_}; }

  Matrix slice_matrix(std::size_t i) const {
    Matrix s(m_, m_);
    std::copy_n(data_.data() + i * m_ * m_, m_ * m_, s.data().begin());
    return s;
  }

  HessianTensor& operator*=(double s) noexcept {
    for (auto& v : data_) v *= s;
    return *this;
  }

  const std::vector<double>& data() const noexcept { return data_; }
  friend bool operator==(const HessianTensor&, const HessianTensor&) = default;

 private:
  std::size_t n_ = 0;
  std::size_t m_ = 0;
  std::vector<double> data_;
};

/// f(x), its input Jacobian (n x m) and input Hessian tensor (n x m x m).
struct DiffEval {
  Vector value;
  Matrix jacobian;
  HessianTensor hessian;

  friend bool operator==(const DiffEval&, const DiffEval&) = default;
};

/// Propagates (value, Jacobian, Hessian) through the network in forward mode.
///
/// Affine layer z = W u + b:       J_z = W J_u,        H_z[k] = sum_j W[k,j] H_u[j]
/// Activation v_k = s(u_k):         J_v[k] = s'(u_k) J_u[k]
///                                  H_v[k] = s'(u_k) H_u[k] + s''(u_k) J_u[k]^T J_u[k]
///
/// Hessian slices are carried as packed upper triangles and expanded at the
/// end, so every returned slice is exactly symmetric. When `tape` is given
/// it receives the same contents `forward` would record.
inline DiffEval forward_with_input_derivatives(const Mlp& net, std::span<const double> x,
                                               ForwardTape* tape = nullptr) {
  detail::require_input(net, x);
  const std::size_t m = net.input_dim();
  const std::size_t packed = packed_size(m);

  // (a, b) pairs with a <= b, in packed order.
  std::vector<std::size_t> pa, pb;
  pa.reserve(packed);
  pb.reserve(packed);
  for (std::size_t a = 0; a < m; ++a)
    for (std::size_t b = a; b < m; ++b) {
      pa.push_back(a);
      pb.push_back(b);
    }

  if (tape) {
    tape->layer_inputs.assign(net.num_layers(), {});
    tape->act_slopes.assign(net.num_layers() - 1, {});
  }

  Vector cur(x.begin(), x.end());
  Matrix jac = Matrix::identity(m);
  Matrix hess(m, packed);  // zero: the input map is linear
  bool hess_zero = true;

  Vector next;
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const std::size_t rows = net.layer_dims()[l + 1];
    const std::size_t cols = net.layer_dims()[l];
    const auto w = net.weights(l);
    if (tape) tape->layer_inputs[l] = cur;
    detail::affine(net, l, cur, next);

    Matrix jz = detail::matmul_rows(w, rows, cols, jac);
    Matrix hz = hess_zero ? Matrix(rows, packed) : detail::matmul_rows(w, rows, cols, hess);

    if (l + 1 < net.num_layers()) {
      if (tape) tape->act_slopes[l].resize(rows);
      for (std::size_t k = 0; k < rows; ++k) {
        const ActivationJet act = activation_jet(net.activation(), next[k]);
        next[k] = act.value;
        if (tape) tape->act_slopes[l][k] = act.d1;
        auto jk = jz.row(k);
        auto hk = hz.row(k);
        for (std::size_t p = 0; p < packed; ++p) hk[p] = act.d1 * hk[p] + act.d2 * jk[pa[p]] * jk[pb[p]];
        for (std::size_t a = 0; a < m; ++a) jk[a] *= act.d1;
      }
      hess_zero = false;
    }
    std::swap(cur, next);
    jac = std::move(jz);
    hess = std::move(hz);
  }
  if (tape) tape->output = cur;

  DiffEval out;
  out.value = std::move(cur);
  out.jacobian = std::move(jac);
  const std::size_t n = net.output_dim();
  out.hessian = HessianTensor(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    auto hi = hess.row(i);
    for (std::size_t p = 0; p < packed; ++p) {
      out.hessian(i, pa[p], pb[p]) = hi[p];
      out.hessian(i, pb[p], pa[p]) = hi[p];
    }
  }
  return out;
}

}  // namespace tictac
