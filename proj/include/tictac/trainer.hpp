#pragma once

// Joint training of the mean network f and the covariance network g.
// All methods trained with the same seed start from the same networks and
// consume the same batches in the same order; each owns its optimizers.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "tictac/data.hpp"
#include "tictac/error.hpp"
#include "tictac/losses.hpp"
#include "tictac/method.hpp"
#include "tictac/mlp.hpp"

namespace tictac {

/// SplitMix64 finalizer, used to derive independent sub-seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
  return mix_seed(mix_seed(seed) ^ mix_seed(stream + 0x51ed270b27a1c3e5ULL));
}

enum SeedStream : std::uint64_t { kMeanNetStream = 1, kCovNetStream = 2, kBatchStream = 3, kDataStream = 4 };

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam() = default;
  Adam(std::size_t size, AdamConfig cfg) : cfg_(cfg), m_(size, 0.0), v_(size, 0.0) {}

  void set_learning_rate(double lr) noexcept { cfg_.learning_rate = lr; }
  double learning_rate() const noexcept { return cfg_.learning_rate; }
  std::size_t steps() const noexcept { return t_; }

  void step(std::span<double> params, std::span<const double> grads) {
    if (params.size() != m_.size() || grads.size() != m_.size())
      throw Error(ErrorCode::ShapeMismatch, "Adam state size");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double g = grads[i];
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = m_[i] / bc1;
      const double vhat = v_[i] / bc2;
      params[i] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }

 private:
  AdamConfig cfg_;
  Vector m_, v_;
  std::size_t t_ = 0;
};

/// Multiplies the base rate by `factor` once `epoch >= floor(at_fraction * epochs)`.
struct StepDecay {
  double factor = 0.1;
  double at_fraction = 0.75;

  double rate(double base, std::size_t epoch, std::size_t epochs) const noexcept {
    const auto boundary = static_cast<std::size_t>(at_fraction * static_cast<double>(epochs));
    return epoch >= boundary ? base * factor : base;
  }
};

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 256;
  AdamConfig adam;
  StepDecay schedule;
  std::uint64_t seed = 0;
  Method method;
  std::vector<std::size_t> mean_hidden{64, 64};
  std::vector<std::size_t> cov_hidden{64, 64};
  Activation activation = Activation::Tanh;
  std::size_t threads = 1;        // >1: per-sample work split across workers
  std::ostream* progress = nullptr;  // key=value line per epoch

  void validate() const {
    if (epochs < 1) throw Error(ErrorCode::InvalidArgument, "epochs must be >= 1");
    if (batch_size < 1) throw Error(ErrorCode::InvalidArgument, "batch_size must be >= 1");
    if (!(adam.learning_rate > 0.0)) throw Error(ErrorCode::InvalidArgument, "learning_rate must be > 0");
    if (!(method.beta >= 0.0 && method.beta <= 1.0)) throw Error(ErrorCode::InvalidArgument, "beta must lie in [0, 1]");
    if (threads < 1) throw Error(ErrorCode::InvalidArgument, "threads must be >= 1");
  }
};

using BatchSchedule = std::vector<std::vector<std::vector<std::size_t>>>;  // [epoch][batch][index]

/// One fresh shuffle per epoch, derived only from `seed`. The last batch of
/// an epoch keeps the remainder.
inline BatchSchedule make_batch_schedule(std::size_t n_samples, std::size_t batch_size, std::size_t epochs,
                                         std::uint64_t seed) {
  if (batch_size < 1) throw Error(ErrorCode::InvalidArgument, "batch_size must be >= 1");
  BatchSchedule sched(epochs);
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> perm(n_samples);
  for (std::size_t e = 0; e < epochs; ++e) {
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t start = 0; start < n_samples; start += batch_size) {
      const std::size_t stop = std::min(n_samples, start + batch_size);
      sched[e].emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(start),
                            perm.begin() + static_cast<std::ptrdiff_t>(stop));
    }
  }
  return sched;
}

struct TrainedPair {
  Method method;
  Mlp mean_net;
  std::optional<Mlp> cov_net;  // absent for MSE
  std::vector<double> loss_trace;  // mean per-sample loss per epoch
};

inline std::vector<std::size_t> architecture(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out) {
  std::vector<std::size_t> dims{in};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(out);
  return dims;
}

/// Networks every method starts from for a given seed. The covariance
/// network's width depends on the method's head; its hidden layers are
/// drawn from the same stream for every method.
inline std::pair<Mlp, std::optional<Mlp>> initial_networks(const TrainConfig& cfg, std::size_t m, std::size_t n) {
  Mlp mean = init_mlp(architecture(m, cfg.mean_hidden, n), cfg.activation, derive_seed(cfg.seed, kMeanNetStream));
  std::optional<Mlp> cov;
  const std::size_t width = head_width(cfg.method.kind, n);
  if (width > 0)
    cov = init_mlp(architecture(m, cfg.cov_hidden, width), cfg.activation, derive_seed(cfg.seed, kCovNetStream));
  return {std::move(mean), std::move(cov)};
}

namespace detail {

struct BatchAccumulator {
  ParamGrads mean_grads;
  ParamGrads cov_grads;
  double loss = 0.0;
  bool finite = true;
};

inline void accumulate_samples(const Method& method, const Mlp& mean_net, const Mlp* cov_net, const Dataset& data,
                               std::span<const std::size_t> indices, double scale, BatchAccumulator& acc) {
  const std::size_t n = data.target_dim();
  ForwardTape mean_tape, cov_tape;
  Vector r(n), upstream_mean(n), upstream_cov;
  for (std::size_t idx : indices) {
    const auto x = data.inputs.row(idx);
    const auto y = data.targets.row(idx);
    std::optional<DiffEval> d;
    Vector y_hat;
    if (needs_input_derivatives(method.kind)) {
      d = forward_with_input_derivatives(mean_net, x, &mean_tape);
      y_hat = d->value;
    } else {
      y_hat = forward(mean_net, x, &mean_tape);
    }
    Vector raw;
    if (cov_net) raw = forward(*cov_net, x, &cov_tape);
    for (std::size_t i = 0; i < n; ++i) r[i] = y[i] - y_hat[i];

    const HeadLoss hl = method_loss(method, r, raw, d ? &*d : nullptr);
    if (!std::isfinite(hl.value)) {
      acc.finite = false;
      return;
    }
    acc.loss += hl.value;
    for (std::size_t i = 0; i < n; ++i) upstream_mean[i] = hl.grad_mean[i] * scale;
    accumulate_param_grads(mean_net, mean_tape, upstream_mean, acc.mean_grads);
    if (cov_net) {
      upstream_cov.resize(hl.grad_head.size());
      for (std::size_t i = 0; i < upstream_cov.size(); ++i) upstream_cov[i] = hl.grad_head[i] * scale;
      accumulate_param_grads(*cov_net, cov_tape, upstream_cov, acc.cov_grads);
    }
  }
}

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace detail

/// Trains `cfg.method` on `data` following `schedule` (normally
/// make_batch_schedule(..., derive_seed(cfg.seed, kBatchStream))).
/// Throws DivergedLoss as soon as a loss or parameter becomes non-finite.
inline TrainedPair train(const TrainConfig& cfg, const Dataset& data, const BatchSchedule& schedule) {
  cfg.validate();
  if (data.size() == 0) throw Error(ErrorCode::InvalidArgument, "empty dataset");
  const std::size_t m = data.input_dim();
  const std::size_t n = data.target_dim();
  auto [mean_net, cov_net] = initial_networks(cfg, m, n);

  Adam mean_opt(mean_net.parameter_count(), cfg.adam);
  Adam cov_opt(cov_net ? cov_net->parameter_count() : 0, cfg.adam);

  TrainedPair out;
  out.method = cfg.method;
  const std::size_t workers = std::max<std::size_t>(1, cfg.threads);
  std::vector<detail::BatchAccumulator> accs(workers);
  for (auto& a : accs) {
    a.mean_grads = ParamGrads(mean_net);
    if (cov_net) a.cov_grads = ParamGrads(*cov_net);
  }

  const std::size_t epochs = schedule.size();
  for (std::size_t e = 0; e < epochs; ++e) {
    const double lr = cfg.schedule.rate(cfg.adam.learning_rate, e, epochs);
    mean_opt.set_learning_rate(lr);
    cov_opt.set_learning_rate(lr);
    double epoch_loss = 0.0;
    std::size_t epoch_count = 0;
    for (const auto& batch : schedule[e]) {
      if (batch.empty()) continue;
      const double scale = 1.0 / static_cast<double>(batch.size());
      for (auto& a : accs) {
        a.mean_grads.zero();
        a.cov_grads.zero();
        a.loss = 0.0;
        a.finite = true;
      }
      const Mlp* cov_ptr = cov_net ? &*cov_net : nullptr;
      if (workers == 1 || batch.size() < 2 * workers) {
        detail::accumulate_samples(cfg.method, mean_net, cov_ptr, data, batch, scale, accs[0]);
      } else {
        // Contiguous chunks, reduced in chunk order.
        std::vector<std::thread> pool;
        const std::size_t chunk = (batch.size() + workers - 1) / workers;
        for (std::size_t w = 0; w < workers; ++w) {
          const std::size_t lo = std::min(batch.size(), w * chunk);
          const std::size_t hi = std::min(batch.size(), lo + chunk);
          pool.emplace_back([&, lo, hi, w] {
            detail::accumulate_samples(cfg.method, mean_net, cov_ptr, data,
                                       std::span<const std::size_t>(batch).subspan(lo, hi - lo), scale, accs[w]);
          });
        }
        for (auto& t : pool) t.join();
        for (std::size_t w = 1; w < workers; ++w) {
          accs[0].mean_grads += accs[w].mean_grads;
          if (cov_net) accs[0].cov_grads += accs[w].cov_grads;
          accs[0].loss += accs[w].loss;
          accs[0].finite = accs[0].finite && accs[w].finite;
        }
      }
      if (!accs[0].finite || !std::isfinite(accs[0].loss))
        throw Error(ErrorCode::DivergedLoss, method_name(cfg.method) + ": non-finite loss at epoch " + std::to_string(e));

      mean_opt.step(mean_net.parameters(), accs[0].mean_grads.values);
      if (cov_net) cov_opt.step(cov_net->parameters(), accs[0].cov_grads.values);
      if (!detail::all_finite(mean_net.parameters()) || (cov_net && !detail::all_finite(cov_net->parameters())))
        throw Error(ErrorCode::DivergedLoss,
                    method_name(cfg.method) + ": non-finite parameters at epoch " + std::to_string(e));
      epoch_loss += accs[0].loss;
      epoch_count += batch.size();
    }
    const double mean_loss = epoch_count ? epoch_loss / static_cast<double>(epoch_count) : 0.0;
    out.loss_trace.push_back(mean_loss);
    if (cfg.progress)
      *cfg.progress << "event=epoch method=" << method_name(cfg.method) << " epoch=" << e + 1 << "/" << epochs
                    << " lr=" << lr << " loss=" << mean_loss << '\n';
  }
  out.mean_net = std::move(mean_net);
  out.cov_net = std::move(cov_net);
  return out;
}

/// Convenience overload deriving the batch schedule from cfg.seed.
inline TrainedPair train(const TrainConfig& cfg, const Dataset& data) {
  cfg.validate();
  return train(cfg, data,
               make_batch_schedule(data.size(), cfg.batch_size, cfg.epochs, derive_seed(cfg.seed, kBatchStream)));
}

}  // namespace tictac
