#pragma once

#include <span>
#include <stdexcept>
#include <string>

#include "dennlm/corpus.hpp"
#include "dennlm/rng.hpp"
#include "dennlm/tensor.hpp"

namespace dennlm {

enum class Activation { kTanh, kSigmoid };

inline std::string to_string(Activation a) {
  return a == Activation::kTanh ? "tanh" : "sigmoid";
}
inline Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::kTanh;
  if (s == "sigmoid") return Activation::kSigmoid;
  throw std::invalid_argument("unknown activation: " + s);
}

/// One feed-forward branch. The embedding matrix is shared across the N-1
/// history positions; their embeddings are concatenated newest word first,
/// pass through one hidden layer, and a V-way softmax.
template <class S>
struct NnlmParams {
  int order = 2;
  Activation activation = Activation::kTanh;
  Mat<S> embed;     // D x V, column per word
  Mat<S> hidden_w;  // H x (N-1)*D
  Vec<S> hidden_b;  // H
  Mat<S> out_w;     // V x H
  Vec<S> out_b;     // V

  Index vocab_size() const { return embed.cols(); }
  Index embed_dim() const { return embed.rows(); }
  Index hidden_size() const { return hidden_w.rows(); }
  Index context_width() const { return order - 1; }
};

template <class S>
struct NnlmGrads {
  Mat<S> embed;
  Mat<S> hidden_w;
  Vec<S> hidden_b;
  Mat<S> out_w;
  Vec<S> out_b;
};

/// Gaussian init with stddev 1/sqrt(fan-in) per weight matrix (the one-hot
/// embedding lookup has fan-in 1), zero biases.
template <class S>
NnlmParams<S> init_nnlm(int order, Index dim, Index hidden, Index vocab,
                        Activation activation, Rng& rng) {
  if (order < 2) throw std::invalid_argument("init_nnlm: order must be >= 2");
  NnlmParams<S> p;
  p.order = order;
  p.activation = activation;
  Index fan_in = (order - 1) * dim;
  p.embed = gaussian_init<S>(rng, dim, vocab, 1.0);
  p.hidden_w = gaussian_init<S>(rng, hidden, fan_in, 1.0 / std::sqrt(static_cast<double>(fan_in)));
  p.hidden_b = Vec<S>::Zero(hidden);
  p.out_w = gaussian_init<S>(rng, vocab, hidden, 1.0 / std::sqrt(static_cast<double>(hidden)));
  p.out_b = Vec<S>::Zero(vocab);
  return p;
}

template <class S>
NnlmGrads<S> zero_grads(const NnlmParams<S>& p) {
  NnlmGrads<S> g;
  g.embed = Mat<S>::Zero(p.embed.rows(), p.embed.cols());
  g.hidden_w = Mat<S>::Zero(p.hidden_w.rows(), p.hidden_w.cols());
  g.hidden_b = Vec<S>::Zero(p.hidden_b.size());
  g.out_w = Mat<S>::Zero(p.out_w.rows(), p.out_w.cols());
  g.out_b = Vec<S>::Zero(p.out_b.size());
  return g;
}

template <class S>
struct NnlmForward {
  Mat<S> input;   // B x (N-1)*D, concatenated embeddings (newest first)
  Mat<S> hidden;  // B x H, post-activation
  Mat<S> probs;   // B x V
};

namespace detail {

template <class S>
void check_batch(const NnlmParams<S>& p, const NGramBatch& batch) {
  if (batch.context_width() != p.context_width())
    throw std::invalid_argument("forward: context width mismatch");
  if ((batch.contexts.array() < 0).any() ||
      (batch.contexts.array() >= static_cast<int32_t>(p.vocab_size())).any())
    throw std::out_of_range("forward: word id out of range");
  if ((batch.targets.array() < 0).any() ||
      (batch.targets.array() >= static_cast<int32_t>(p.vocab_size())).any())
    throw std::out_of_range("forward: target id out of range");
}

// Gathers the concatenated context embeddings: block p holds the embedding
// of the p-th most recent history word.
template <class S>
Mat<S> gather_input(const NnlmParams<S>& p, const NGramBatch& batch) {
  const Index b_n = batch.size(), width = p.context_width(), dim = p.embed_dim();
  Mat<S> x(b_n, width * dim);
  for (Index b = 0; b < b_n; ++b)
    for (Index k = 0; k < width; ++k)
      x.row(b).segment(k * dim, dim) =
          p.embed.col(batch.contexts(b, width - 1 - k)).transpose();
  return x;
}

}  // namespace detail

template <class S>
NnlmForward<S> forward(const NnlmParams<S>& p, const NGramBatch& batch) {
  detail::check_batch(p, batch);
  NnlmForward<S> f;
  f.input = detail::gather_input(p, batch);
  Mat<S> pre = f.input * p.hidden_w.transpose();
  pre.rowwise() += p.hidden_b.transpose();
  f.hidden = (p.activation == Activation::kTanh) ? tanh_elem(pre) : sigmoid_elem(pre);
  Mat<S> logits = f.hidden * p.out_w.transpose();
  logits.rowwise() += p.out_b.transpose();
  f.probs = softmax_rows(logits);
  return f;
}

template <class S>
double nll(const NnlmParams<S>& p, const NGramBatch& batch) {
  return cross_entropy_rows(forward(p, batch).probs, batch.targets);
}

/// Backpropagates a gradient w.r.t. the output logits through one branch,
/// accumulating into `g`. Shared by the plain and the multi-branch losses.
template <class S>
void backward_from_dlogits(const NnlmParams<S>& p, const NGramBatch& batch,
                           const NnlmForward<S>& f, const Mat<S>& dlogits,
                           NnlmGrads<S>& g) {
  const Index width = p.context_width(), dim = p.embed_dim();
  g.out_w.noalias() += dlogits.transpose() * f.hidden;
  g.out_b.noalias() += dlogits.colwise().sum().transpose();

  Mat<S> dhidden = dlogits * p.out_w;
  Mat<S> dpre;
  if (p.activation == Activation::kTanh)
    dpre = (dhidden.array() * (S(1) - f.hidden.array().square())).matrix();
  else
    dpre = (dhidden.array() * f.hidden.array() * (S(1) - f.hidden.array())).matrix();

  g.hidden_w.noalias() += dpre.transpose() * f.input;
  g.hidden_b.noalias() += dpre.colwise().sum().transpose();

  Mat<S> dinput = dpre * p.hidden_w;
  for (Index b = 0; b < batch.size(); ++b)
    for (Index k = 0; k < width; ++k)
      g.embed.col(batch.contexts(b, width - 1 - k)) +=
          dinput.row(b).segment(k * dim, dim).transpose();
}

/// Exact gradient of nll() w.r.t. every parameter.
template <class S>
NnlmGrads<S> backward(const NnlmParams<S>& p, const NGramBatch& batch) {
  NnlmForward<S> f = forward(p, batch);
  Mat<S> dlogits = f.probs;
  const S inv_b = S(1) / static_cast<S>(batch.size());
  dlogits *= inv_b;
  for (Index b = 0; b < batch.size(); ++b) dlogits(b, batch.targets(b)) -= inv_b;
  NnlmGrads<S> g = zero_grads(p);
  backward_from_dlogits(p, batch, f, dlogits, g);
  return g;
}

/// Next-word distribution for a single context.
template <class S>
Vec<S> distribution(const NnlmParams<S>& p, std::span<const int32_t> context) {
  if (static_cast<Index>(context.size()) != p.context_width())
    throw std::invalid_argument("distribution: context width mismatch");
  NGramBatch batch;
  batch.contexts.resize(1, p.context_width());
  for (Index k = 0; k < p.context_width(); ++k)
    batch.contexts(0, k) = context[static_cast<size_t>(k)];
  batch.targets = IdVec::Zero(1);
  return forward(p, batch).probs.row(0).transpose();
}

}  // namespace dennlm
