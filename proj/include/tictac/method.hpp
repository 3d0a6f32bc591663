#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "tictac/covheads.hpp"
#include "tictac/error.hpp"

namespace tictac {

enum class MethodKind { Tic, NllFull, NllDiag, BetaNll, Faithful, Mse };

/// A training method; `beta` is only read by BetaNll.
struct Method {
  MethodKind kind = MethodKind::Tic;
  double beta = 0.5;

  friend bool operator==(const Method&, const Method&) = default;
};

inline const char* to_string(MethodKind k) {
  switch (k) {
    case MethodKind::Tic: return "tic";
    case MethodKind::NllFull: return "nll";
    case MethodKind::NllDiag: return "diagonal";
    case MethodKind::BetaNll: return "beta_nll";
    case MethodKind::Faithful: return "faithful";
    case MethodKind::Mse: return "mse";
  }
  return "?";
}

inline std::string method_name(const Method& m) { return to_string(m.kind); }

/// Accepts the canonical names plus a few spellings seen in configs.
inline Method parse_method(const std::string& name, double beta = 0.5) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw Error(ErrorCode::InvalidArgument, "beta must lie in [0, 1]");
  if (name == "tic") return {MethodKind::Tic, beta};
  if (name == "nll" || name == "nll_full") return {MethodKind::NllFull, beta};
  if (name == "diagonal" || name == "diag" || name == "nll_diag") return {MethodKind::NllDiag, beta};
  if (name == "beta_nll" || name == "beta-nll" || name == "betanll") return {MethodKind::BetaNll, beta};
  if (name == "faithful") return {MethodKind::Faithful, beta};
  if (name == "mse") return {MethodKind::Mse, beta};
  throw Error(ErrorCode::InvalidArgument, "unknown method '" + name + "'");
}

inline std::vector<Method> all_methods(double beta = 0.5) {
  return {{MethodKind::Mse, beta},     {MethodKind::NllDiag, beta},  {MethodKind::NllFull, beta},
          {MethodKind::BetaNll, beta}, {MethodKind::Faithful, beta}, {MethodKind::Tic, beta}};
}

/// Output width of the covariance network for n targets (0: no network).
inline std::size_t head_width(MethodKind k, std::size_t n) {
  switch (k) {
    case MethodKind::Tic: return tic_head_width(n);
    case MethodKind::NllFull:
    case MethodKind::Faithful: return packed_size(n);
    case MethodKind::NllDiag:
    case MethodKind::BetaNll: return n;
    case MethodKind::Mse: return 0;
  }
  return 0;
}

/// Whether the mean network's input derivatives are needed.
inline bool needs_input_derivatives(MethodKind k) { return k == MethodKind::Tic; }

/// Predicted covariance for one sample. `d` is only consulted for TIC.
inline SymMatrix predicted_covariance(MethodKind k, std::span<const double> raw_head, const DiffEval* d,
                                      std::size_t n) {
  switch (k) {
    case MethodKind::Tic:
      if (!d) throw Error(ErrorCode::InvalidArgument, "TIC covariance needs input derivatives");
      return tic_covariance(*d, tic_head_decode(raw_head));
    case MethodKind::NllFull:
    case MethodKind::Faithful: return full_cholesky_covariance(raw_head);
    case MethodKind::NllDiag:
    case MethodKind::BetaNll: return diag_covariance(raw_head);
    case MethodKind::Mse: return SymMatrix::identity(n);
  }
  return SymMatrix::identity(n);
}

}  // namespace tictac
