#pragma once

#include <cstdint>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dennlm/denn.hpp"

namespace dennlm {

/// RMSProp settings and the epoch-loop schedule. The learning rate halves
/// after `patience` epochs without held-out improvement; a second such
/// stagnation stops training.
struct OptimConfig {
  double learning_rate = 0.02;
  double rho = 0.9;       // squared-gradient accumulator decay
  double epsilon = 1e-8;  // denominator guard
  double clip_norm = 5;   // global L2 ceiling, 0 disables
  double bias_lr_scale = 1;
  double l1 = 0, l2 = 0;  // weight penalties; biases are exempt
  Index batch_size = 128;
  int max_epochs = 30;
  int patience = 2;
};

inline void validate(const OptimConfig& c) {
  if (c.learning_rate <= 0) throw std::invalid_argument("learning_rate must be > 0");
  if (c.rho < 0 || c.rho >= 1) throw std::invalid_argument("rho must lie in [0,1)");
  if (c.epsilon <= 0) throw std::invalid_argument("epsilon must be > 0");
  if (c.clip_norm < 0) throw std::invalid_argument("clip_norm must be >= 0");
  if (c.bias_lr_scale <= 0) throw std::invalid_argument("bias_lr_scale must be > 0");
  if (c.l1 < 0 || c.l2 < 0) throw std::invalid_argument("l1/l2 must be >= 0");
  if (c.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (c.max_epochs < 1) throw std::invalid_argument("max_epochs must be >= 1");
  if (c.patience < 1) throw std::invalid_argument("patience must be >= 1");
}

/// Per-parameter squared-gradient accumulators, one set per branch.
template <class S>
struct OptimState {
  std::vector<NnlmGrads<S>> accum;
  int64_t step = 0;
};

template <class S>
OptimState<S> init_optim_state(const DennParams<S>& p) {
  OptimState<S> s;
  for (const auto& b : p.branches) s.accum.push_back(zero_grads(b));
  return s;
}

namespace detail {

// Applies f(param, grad, accum, is_bias) to every parameter tensor.
template <class S, class F>
void for_each_param(DennParams<S>& p, std::vector<NnlmGrads<S>>& g, OptimState<S>& s,
                    F&& f) {
  for (size_t m = 0; m < p.branches.size(); ++m) {
    auto& b = p.branches[m];
    auto& gm = g[m];
    auto& sm = s.accum[m];
    f(b.embed, gm.embed, sm.embed, false);
    f(b.hidden_w, gm.hidden_w, sm.hidden_w, false);
    f(b.hidden_b, gm.hidden_b, sm.hidden_b, true);
    f(b.out_w, gm.out_w, sm.out_w, false);
    f(b.out_b, gm.out_b, sm.out_b, true);
  }
}

template <class S>
double grad_sq_norm(const std::vector<NnlmGrads<S>>& grads) {
  double acc = 0;
  for (const auto& g : grads) {
    acc += g.embed.template cast<double>().squaredNorm();
    acc += g.hidden_w.template cast<double>().squaredNorm();
    acc += g.hidden_b.template cast<double>().squaredNorm();
    acc += g.out_w.template cast<double>().squaredNorm();
    acc += g.out_b.template cast<double>().squaredNorm();
  }
  return acc;
}

}  // namespace detail

/// Rescales all gradients so the global L2 norm does not exceed clip_norm.
/// clip_norm == 0 disables clipping. Returns the pre-clip norm.
template <class S>
double clip_global_norm(std::vector<NnlmGrads<S>>& grads, double clip_norm) {
  if (clip_norm < 0) throw std::invalid_argument("clip_global_norm: clip_norm must be >= 0");
  double norm = std::sqrt(detail::grad_sq_norm(grads));
  if (clip_norm > 0 && norm > clip_norm) {
    const S scale = static_cast<S>(clip_norm / norm);
    for (auto& g : grads) {
      g.embed *= scale;
      g.hidden_w *= scale;
      g.hidden_b *= scale;
      g.out_w *= scale;
      g.out_b *= scale;
    }
  }
  return norm;
}

/// One RMSProp update in place. Weight gradients first absorb the L1/L2
/// penalty terms; bias updates use learning_rate * bias_lr_scale and carry
/// no penalty. Throws on non-finite gradients without touching the params.
template <class S>
void rmsprop_step(DennParams<S>& params, std::vector<NnlmGrads<S>>& grads,
                  OptimState<S>& state, const OptimConfig& cfg) {
  validate(cfg);
  for (const auto& g : grads)
    if (!g.embed.allFinite() || !g.hidden_w.allFinite() || !g.hidden_b.allFinite() ||
        !g.out_w.allFinite() || !g.out_b.allFinite())
      throw std::runtime_error("rmsprop_step: non-finite gradient");

  const S rho = static_cast<S>(cfg.rho);
  const S eps = static_cast<S>(cfg.epsilon);
  detail::for_each_param(params, grads, state, [&](auto& theta, auto& g, auto& r, bool is_bias) {
    const S lr = static_cast<S>(is_bias ? cfg.learning_rate * cfg.bias_lr_scale
                                        : cfg.learning_rate);
    if (!is_bias && (cfg.l1 != 0 || cfg.l2 != 0)) {
      g.array() += static_cast<S>(cfg.l2) * theta.array() +
                   static_cast<S>(cfg.l1) * theta.array().sign();
    }
    r.array() = rho * r.array() + (S(1) - rho) * g.array().square();
    theta.array() -= lr * g.array() / (r.array().sqrt() + eps);
  });
  ++state.step;
}

struct TrainLog {
  struct Row {
    int epoch;
    double total, mixture_nll, individual_nll, diversity;
    double heldout_ppl;
    double learning_rate;
  };
  std::vector<Row> rows;
  double best_heldout_ppl = 0;
  int best_epoch = 0;

  std::string to_csv() const {
    std::ostringstream out;
    out.precision(17);
    out << "epoch,train_total,mixture_nll,individual_nll,diversity,heldout_ppl,lr\n";
    for (const auto& r : rows)
      out << r.epoch << ',' << r.total << ',' << r.mixture_nll << ','
          << r.individual_nll << ',' << r.diversity << ',' << r.heldout_ppl << ','
          << r.learning_rate << '\n';
    return out.str();
  }
};

/// Epoch loop: seeded shuffle, loss/backward, clip, RMSProp step; held-out
/// perplexity of the fused model after every epoch. Keeps and returns the
/// parameters of the best held-out epoch. Deterministic given (model, data,
/// weights, config, seed).
template <class S>
std::pair<DennParams<S>, TrainLog> train(DennParams<S> model,
                                         std::span<const int32_t> train_ids,
                                         std::span<const int32_t> heldout_ids,
                                         const LossWeights& weights,
                                         const OptimConfig& cfg, uint64_t seed,
                                         int32_t eos_id) {
  validate(model);
  validate(weights);
  validate(cfg);
  if (train_ids.empty() || heldout_ids.empty())
    throw std::invalid_argument("train: empty corpus");

  const NGramBatch windows = ngram_windows(train_ids, model.order(), eos_id);
  OptimState<S> state = init_optim_state(model);
  TrainLog log;

  DennParams<S> best = model;
  double best_ppl = fused_perplexity(model, heldout_ids, eos_id);
  int best_epoch = 0;
  double lr = cfg.learning_rate;
  int stall = 0, stagnations = 0;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    auto batches =
        make_batches(windows, cfg.batch_size, derive_seed(seed, 0x5u + 2u * static_cast<uint64_t>(epoch)));
    Rng sample_rng(derive_seed(seed, 0x6u + 2u * static_cast<uint64_t>(epoch)));

    double sum_total = 0, sum_mix = 0, sum_ind = 0, sum_div = 0;
    int64_t rows_seen = 0;
    OptimConfig step_cfg = cfg;
    step_cfg.learning_rate = lr;
    for (const auto& batch : batches) {
      auto [loss, grads] = denn_loss_and_backward(model, batch, weights, sample_rng);
      clip_global_norm(grads, cfg.clip_norm);
      rmsprop_step(model, grads, state, step_cfg);
      const auto b_n = static_cast<double>(batch.size());
      sum_total += loss.total * b_n;
      sum_mix += loss.mixture_nll * b_n;
      sum_ind += loss.individual_nll * b_n;
      sum_div += loss.diversity * b_n;
      rows_seen += batch.size();
    }

    const double inv = 1.0 / static_cast<double>(rows_seen);
    double heldout = fused_perplexity(model, heldout_ids, eos_id);
    log.rows.push_back({epoch, sum_total * inv, sum_mix * inv, sum_ind * inv,
                        sum_div * inv, heldout, lr});

    if (heldout < best_ppl) {
      best_ppl = heldout;
      best = model;
      best_epoch = epoch;
      stall = 0;
    } else {
      ++stall;
    }
    if (stall >= cfg.patience) {
      ++stagnations;
      stall = 0;
      if (stagnations >= 2) break;
      lr *= 0.5;
    }
  }

  log.best_heldout_ppl = best_ppl;
  log.best_epoch = best_epoch;
  return {std::move(best), log};
}

}  // namespace dennlm
