#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "dennlm/nnlm.hpp"

namespace dennlm {

/// M branches plus fixed mixture weights. All branches share the order and
/// vocabulary; embedding and hidden sizes may differ per branch.
template <class S>
struct DennParams {
  std::vector<NnlmParams<S>> branches;
  VecXd alpha;  // simplex, one weight per branch

  Index branch_count() const { return static_cast<Index>(branches.size()); }
  int order() const { return branches.at(0).order; }
  Index vocab_size() const { return branches.at(0).vocab_size(); }
};

template <class S>
void validate(const DennParams<S>& p) {
  if (p.branches.empty()) throw std::invalid_argument("DennParams: no branches");
  if (p.alpha.size() != p.branch_count())
    throw std::invalid_argument("DennParams: alpha size mismatch");
  if ((p.alpha.array() <= 0).any())
    throw std::invalid_argument("DennParams: alpha entries must be positive");
  if (std::abs(p.alpha.sum() - 1.0) > 1e-12)
    throw std::invalid_argument("DennParams: alpha must sum to 1");
  for (const auto& b : p.branches)
    if (b.order != p.order() || b.vocab_size() != p.vocab_size())
      throw std::invalid_argument("DennParams: branches disagree on order or vocabulary");
}

template <class S>
DennParams<S> init_denn(int order, std::span<const std::pair<int, int>> branch_dims,
                        Index vocab, Activation activation, uint64_t seed) {
  DennParams<S> p;
  const auto m_n = static_cast<Index>(branch_dims.size());
  for (Index m = 0; m < m_n; ++m) {
    Rng rng(derive_seed(seed, static_cast<uint64_t>(m)));
    p.branches.push_back(init_nnlm<S>(order, branch_dims[static_cast<size_t>(m)].first,
                                      branch_dims[static_cast<size_t>(m)].second, vocab,
                                      activation, rng));
  }
  p.alpha = VecXd::Constant(m_n, 1.0 / static_cast<double>(m_n));
  return p;
}

/// Loss weights: beta balances fused vs per-branch cross-entropy, gamma
/// scales the representation-diversity term computed over `sample_size`
/// vocabulary words drawn fresh each minibatch. `raw_diversity` switches the
/// diversity term to the plain unnormalized inner-product sum instead of the
/// per-entry, per-pair mean.
struct LossWeights {
  double beta = 0.5;
  double gamma = 0.0;
  int32_t sample_size = 500;
  bool raw_diversity = false;
};

inline void validate(const LossWeights& w) {
  if (w.beta < 0 || w.beta > 1) throw std::invalid_argument("beta must lie in [0,1]");
  if (w.gamma < 0) throw std::invalid_argument("gamma must be >= 0");
  if (w.sample_size < 1) throw std::invalid_argument("sample_size must be >= 1");
}

struct LossBreakdown {
  double total = 0;
  double mixture_nll = 0;     // -log of the alpha-fused target probability
  double individual_nll = 0;  // alpha-weighted per-branch cross-entropy
  double diversity = 0;       // d_rep term, before gamma
  VecXd per_branch_nll;
};

inline constexpr double kCosineEps = 1e-12;

/// K x K matrix of pairwise cosine similarities between the sampled
/// embedding columns. Diagonal is set to exactly 1; a zero column yields
/// zero off-diagonal entries.
template <class S>
Mat<S> cosine_matrix(const Mat<S>& embed, std::span<const int32_t> sample) {
  const auto k_n = static_cast<Index>(sample.size());
  Mat<S> u(embed.rows(), k_n);
  for (Index j = 0; j < k_n; ++j) {
    int32_t w = sample[static_cast<size_t>(j)];
    if (w < 0 || w >= embed.cols())
      throw std::out_of_range("cosine_matrix: sampled id out of range");
    u.col(j) = embed.col(w);
  }
  Vec<S> norms = u.colwise().norm();
  Mat<S> c = u.transpose() * u;
  c.array() /= ((norms * norms.transpose()).array() + static_cast<S>(kCosineEps));
  c.diagonal().setOnes();
  return c;
}

/// Negated mean elementwise product of two cosine matrices; lies in [-1, 1]
/// and is symmetric in its arguments.
template <class S>
double d_rep(const Mat<S>& c1, const Mat<S>& c2) {
  if (c1.rows() != c2.rows() || c1.cols() != c2.cols())
    throw std::invalid_argument("d_rep: dimension mismatch");
  double s = (c1.array().template cast<double>() * c2.array().template cast<double>()).sum();
  return -s / static_cast<double>(c1.rows() * c1.cols());
}

/// Mean of d_rep over all unordered branch pairs; 0 for a single branch.
template <class S>
double multi_d_rep(const std::vector<Mat<S>>& cs) {
  if (cs.empty()) throw std::invalid_argument("multi_d_rep: no matrices");
  const auto m_n = static_cast<Index>(cs.size());
  if (m_n == 1) return 0.0;
  double acc = 0;
  for (Index i = 0; i < m_n; ++i)
    for (Index j = i + 1; j < m_n; ++j) acc += d_rep(cs[static_cast<size_t>(i)], cs[static_cast<size_t>(j)]);
  return acc / (static_cast<double>(m_n) * static_cast<double>(m_n - 1) / 2.0);
}

namespace detail {

template <class S>
struct DiversityWork {
  std::vector<int32_t> sample;
  std::vector<Mat<S>> u;       // gathered columns per branch
  std::vector<Vec<S>> norms;   // column norms per branch
  std::vector<Mat<S>> cosine;  // cosine matrices per branch
  double value = 0;            // d_rep term of the loss breakdown
};

// Draws the shared word sample and builds every branch's cosine matrix.
// The sample is drawn without replacement, once per minibatch, identically
// in the loss and backward paths.
template <class S>
DiversityWork<S> diversity_forward(const DennParams<S>& p, const LossWeights& w, Rng& rng) {
  DiversityWork<S> d;
  const auto m_n = static_cast<size_t>(p.branch_count());
  if (m_n < 2) return d;
  if (w.sample_size > p.vocab_size())
    throw std::invalid_argument("diversity sample size exceeds vocabulary");
  d.sample = rng.sample_without_replacement(w.sample_size,
                                            static_cast<int32_t>(p.vocab_size()));
  d.u.resize(m_n);
  d.norms.resize(m_n);
  d.cosine.resize(m_n);
  for (size_t m = 0; m < m_n; ++m) {
    const Mat<S>& embed = p.branches[m].embed;
    Mat<S>& u = d.u[m];
    u.resize(embed.rows(), w.sample_size);
    for (Index j = 0; j < w.sample_size; ++j)
      u.col(j) = embed.col(d.sample[static_cast<size_t>(j)]);
    d.norms[m] = u.colwise().norm();
    Mat<S> c = u.transpose() * u;
    c.array() /=
        ((d.norms[m] * d.norms[m].transpose()).array() + static_cast<S>(kCosineEps));
    c.diagonal().setOnes();
    d.cosine[m] = std::move(c);
  }
  double mean = multi_d_rep(d.cosine);
  if (w.raw_diversity) {
    const auto k = static_cast<double>(w.sample_size);
    const double pairs = static_cast<double>(m_n) * static_cast<double>(m_n - 1) / 2.0;
    d.value = mean * k * k * pairs;  // undo both normalizations
  } else {
    d.value = mean;
  }
  return d;
}

// Per-row, per-branch coefficients of the classification gradient and the
// loss values they share. q(b,m) = branch m's probability of the target.
template <class S>
struct MixtureWork {
  MatXd q;       // B x M target probabilities
  VecXd mix;     // B, alpha-fused target probability
  LossBreakdown loss;
};

template <class S>
MixtureWork<S> mixture_forward(const DennParams<S>& p,
                               const std::vector<NnlmForward<S>>& fwd,
                               const NGramBatch& batch) {
  const Index b_n = batch.size();
  const Index m_n = p.branch_count();
  MixtureWork<S> mw;
  mw.q.resize(b_n, m_n);
  for (Index m = 0; m < m_n; ++m)
    for (Index b = 0; b < b_n; ++b)
      mw.q(b, m) = std::max(
          static_cast<double>(fwd[static_cast<size_t>(m)].probs(b, batch.targets(b))),
          kProbFloor);
  mw.mix = mw.q * p.alpha;

  mw.loss.per_branch_nll = (-(mw.q.array().log()).colwise().mean()).transpose();
  mw.loss.mixture_nll = -mw.mix.array().log().mean();
  mw.loss.individual_nll = mw.loss.per_branch_nll.dot(p.alpha);
  return mw;
}

}  // namespace detail

/// The three-term training loss over one batch: beta-weighted fused
/// cross-entropy, (1-beta)-weighted per-branch cross-entropy, and the
/// gamma-weighted diversity term (subtracted, so minimizing the total
/// decorrelates the branch representations). Sums over tokens are batch
/// means. The rng drives only the diversity word sample.
template <class S>
LossBreakdown denn_loss(const DennParams<S>& p, const NGramBatch& batch,
                        const LossWeights& w, Rng& rng) {
  validate(p);
  validate(w);
  std::vector<NnlmForward<S>> fwd;
  fwd.reserve(static_cast<size_t>(p.branch_count()));
  for (const auto& b : p.branches) fwd.push_back(forward(b, batch));
  auto mw = detail::mixture_forward(p, fwd, batch);
  auto div = detail::diversity_forward(p, w, rng);
  mw.loss.diversity = div.value;
  mw.loss.total = w.beta * mw.loss.mixture_nll + (1.0 - w.beta) * mw.loss.individual_nll -
                  w.gamma * mw.loss.diversity;
  return mw.loss;
}

/// Loss plus the exact gradient of its total w.r.t. every branch parameter.
/// The diversity term reaches only the sampled embedding columns.
template <class S>
std::pair<LossBreakdown, std::vector<NnlmGrads<S>>> denn_loss_and_backward(
    const DennParams<S>& p, const NGramBatch& batch, const LossWeights& w, Rng& rng) {
  validate(p);
  validate(w);
  const Index b_n = batch.size();
  const Index m_n = p.branch_count();

  std::vector<NnlmForward<S>> fwd;
  fwd.reserve(static_cast<size_t>(m_n));
  for (const auto& b : p.branches) fwd.push_back(forward(b, batch));
  auto mw = detail::mixture_forward(p, fwd, batch);
  auto div = detail::diversity_forward(p, w, rng);
  mw.loss.diversity = div.value;
  mw.loss.total = w.beta * mw.loss.mixture_nll + (1.0 - w.beta) * mw.loss.individual_nll -
                  w.gamma * mw.loss.diversity;

  std::vector<NnlmGrads<S>> grads;
  grads.reserve(static_cast<size_t>(m_n));
  for (Index m = 0; m < m_n; ++m) {
    const auto& f = fwd[static_cast<size_t>(m)];
    // Row coefficients: beta routes through the fused probability, 1-beta
    // through the branch's own cross-entropy.
    VecXd coef = ((w.beta * (mw.q.col(m).array() / mw.mix.array()) + (1.0 - w.beta)) *
                  (p.alpha(m) / static_cast<double>(b_n)))
                     .matrix();
    Mat<S> dlogits = f.probs;
    for (Index b = 0; b < b_n; ++b) {
      auto c = static_cast<S>(coef(b));
      dlogits.row(b) *= c;
      dlogits(b, batch.targets(b)) -= c;
    }
    NnlmGrads<S> g = zero_grads(p.branches[static_cast<size_t>(m)]);
    backward_from_dlogits(p.branches[static_cast<size_t>(m)], batch, f, dlogits, g);
    grads.push_back(std::move(g));
  }

  if (w.gamma != 0 && m_n >= 2) {
    const auto k_n = static_cast<Index>(w.sample_size);
    // d(total)/dC_m = coef_div * sum of the other branches' cosine matrices.
    const double pairs = static_cast<double>(m_n) * static_cast<double>(m_n - 1) / 2.0;
    const double coef_div =
        w.raw_diversity ? w.gamma
                        : w.gamma / (pairs * static_cast<double>(k_n) * static_cast<double>(k_n));
    Mat<S> c_sum = Mat<S>::Zero(k_n, k_n);
    for (Index m = 0; m < m_n; ++m) c_sum += div.cosine[static_cast<size_t>(m)];

    for (Index m = 0; m < m_n; ++m) {
      const Mat<S>& c = div.cosine[static_cast<size_t>(m)];
      const Mat<S>& u = div.u[static_cast<size_t>(m)];
      const Vec<S>& norms = div.norms[static_cast<size_t>(m)];
      Mat<S> g_c = (c_sum - c) * static_cast<S>(coef_div);
      g_c.diagonal().setZero();  // diagonal entries are constants

      Mat<S> den =
          ((norms * norms.transpose()).array() + static_cast<S>(kCosineEps)).matrix();
      // dC[a,b]/du_a = u_b/den - C[a,b] * n_b/(n_a * den) * u_a; the factor
      // 2 folds in the symmetric (b,a) term.
      Mat<S> w2 = (S(2) * g_c.array() / den.array()).matrix();
      Vec<S> scale(k_n);
      for (Index a = 0; a < k_n; ++a) {
        if (norms(a) > S(0)) {
          scale(a) = (w2.row(a).array() * c.row(a).array() * norms.transpose().array())
                         .sum() / norms(a);
        } else {
          scale(a) = S(0);
        }
      }
      Mat<S> du = u * w2.transpose();
      du.noalias() -= u * scale.asDiagonal();
      auto& ge = grads[static_cast<size_t>(m)].embed;
      for (Index a = 0; a < k_n; ++a)
        ge.col(div.sample[static_cast<size_t>(a)]) += du.col(a);
    }
  }
  return {mw.loss, std::move(grads)};
}

template <class S>
std::vector<NnlmGrads<S>> denn_backward(const DennParams<S>& p, const NGramBatch& batch,
                                        const LossWeights& w, Rng& rng) {
  return denn_loss_and_backward(p, batch, w, rng).second;
}

/// Alpha-weighted fusion of the branch distributions.
template <class S>
Vec<S> fuse_predict(const DennParams<S>& p, std::span<const int32_t> context) {
  validate(p);
  Vec<S> out = Vec<S>::Zero(p.vocab_size());
  for (Index m = 0; m < p.branch_count(); ++m)
    out += static_cast<S>(p.alpha(m)) *
           distribution(p.branches[static_cast<size_t>(m)], context);
  return out;
}

/// Fused probabilities for a whole batch.
template <class S>
Mat<S> fused_probs(const DennParams<S>& p, const NGramBatch& batch) {
  Mat<S> out = Mat<S>::Zero(batch.size(), p.vocab_size());
  for (Index m = 0; m < p.branch_count(); ++m)
    out += static_cast<S>(p.alpha(m)) *
           forward(p.branches[static_cast<size_t>(m)], batch).probs;
  return out;
}

/// Base-2 perplexity of the fused model over an id stream; used for
/// held-out tracking during training.
template <class S>
double fused_perplexity(const DennParams<S>& p, std::span<const int32_t> ids,
                        int32_t eos_id, Index batch_size = 256) {
  if (ids.empty()) throw std::invalid_argument("fused_perplexity: empty stream");
  NGramBatch windows = ngram_windows(ids, p.order(), eos_id);
  double acc = 0;
  const Index n = windows.size();
  for (Index start = 0; start < n; start += batch_size) {
    Index b_n = std::min(batch_size, n - start);
    NGramBatch chunk;
    chunk.contexts = windows.contexts.middleRows(start, b_n);
    chunk.targets = windows.targets.segment(start, b_n);
    Mat<S> probs = fused_probs(p, chunk);
    for (Index b = 0; b < b_n; ++b)
      acc += std::log2(
          std::max(static_cast<double>(probs(b, chunk.targets(b))), kProbFloor));
  }
  return std::exp2(-acc / static_cast<double>(n));
}

/// The single-network view of a multi-branch model: a stacked per-position
/// embedding map and block-diagonal hidden/output weights. Feeding the
/// stacked history one-hots through these matrices reproduces every
/// branch's hidden activations, concatenated.
template <class S>
struct BlockMatrices {
  Mat<S> embed_block;   // sum_m (N-1) D_m  x  (N-1) V
  Mat<S> hidden_block;  // sum_m H_m  x  sum_m (N-1) D_m
  Mat<S> out_block;     // M V  x  sum_m H_m
  Vec<S> hidden_bias;   // sum_m H_m
  Vec<S> out_bias;      // M V
};

template <class S>
BlockMatrices<S> to_block_matrices(const DennParams<S>& p) {
  validate(p);
  const Index width = p.order() - 1;
  const Index v_n = p.vocab_size();
  Index total_e = 0, total_h = 0;
  for (const auto& b : p.branches) {
    total_e += width * b.embed_dim();
    total_h += b.hidden_size();
  }

  BlockMatrices<S> out;
  out.embed_block = Mat<S>::Zero(total_e, width * v_n);
  out.hidden_block = Mat<S>::Zero(total_h, total_e);
  out.out_block = Mat<S>::Zero(p.branch_count() * v_n, total_h);
  out.hidden_bias.resize(total_h);
  out.out_bias.resize(p.branch_count() * v_n);

  Index row_e = 0, row_h = 0, row_o = 0, col_e = 0, col_h = 0;
  for (const auto& b : p.branches) {
    const Index dim = b.embed_dim(), h_n = b.hidden_size();
    // One copy of the branch embedding per history position, on the
    // position diagonal.
    for (Index k = 0; k < width; ++k)
      out.embed_block.block(row_e + k * dim, k * v_n, dim, v_n) = b.embed;
    out.hidden_block.block(row_h, col_e, h_n, width * dim) = b.hidden_w;
    out.out_block.block(row_o, col_h, v_n, h_n) = b.out_w;
    out.hidden_bias.segment(row_h, h_n) = b.hidden_b;
    out.out_bias.segment(row_o, v_n) = b.out_b;
    row_e += width * dim;
    col_e += width * dim;
    row_h += h_n;
    col_h += h_n;
    row_o += v_n;
  }
  return out;
}

}  // namespace dennlm
