#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dennlm/denn.hpp"
#include "dennlm/ngram.hpp"

namespace dennlm {

/// Anything that maps an (N-1)-word history to a next-word simplex.
/// Queries are read-only and thread-safe once the underlying model is
/// built. Adapters below wrap the concrete model types; they do not own
/// the wrapped model.
class Lm {
 public:
  virtual ~Lm() = default;
  virtual int32_t vocab_size() const = 0;
  virtual VecXd distribution(std::span<const int32_t> context) const = 0;

  /// Probability assigned to each row's target; the default walks rows
  /// through distribution(), overrides batch it.
  virtual void target_probs(const IdMat& contexts, const IdVec& targets,
                            std::span<double> out) const;
};

/// Per-model probabilities of the realized next word at every position of
/// the padded window stream, computed in bounded-memory chunks.
std::vector<double> target_probs(const Lm& model, std::span<const int32_t> ids,
                                 int order, int32_t eos_id);

struct EvalReport {
  int64_t token_count = 0;
  std::vector<double> log2_probs;  // per token
  double mean_log2 = 0;            // L, a negative number for real models
  double perplexity = 0;           // 2^(-L)
};

/// Base-2 perplexity over the padded window stream (eos targets count as
/// tokens). Throws, naming the position, if any target probability is 0.
EvalReport perplexity(const Lm& model, std::span<const int32_t> ids, int order,
                      int32_t eos_id);

class KnLm final : public Lm {
 public:
  explicit KnLm(const KneserNeyModel& model) : model_(&model) {}
  int32_t vocab_size() const override { return model_->vocab_size(); }
  VecXd distribution(std::span<const int32_t> context) const override {
    return model_->distribution(context);
  }
  void target_probs(const IdMat& contexts, const IdVec& targets,
                    std::span<double> out) const override;

 private:
  const KneserNeyModel* model_;
};

template <class S>
class NeuralLm final : public Lm {
 public:
  explicit NeuralLm(const NnlmParams<S>& params) : params_(&params) {}
  int32_t vocab_size() const override { return static_cast<int32_t>(params_->vocab_size()); }
  VecXd distribution(std::span<const int32_t> context) const override {
    VecXd p = dennlm::distribution(*params_, context).template cast<double>();
    return p.cwiseMax(kProbFloor);
  }
  void target_probs(const IdMat& contexts, const IdVec& targets,
                    std::span<double> out) const override {
    NGramBatch batch{contexts, targets};
    Mat<S> probs = forward(*params_, batch).probs;
    for (Index b = 0; b < targets.size(); ++b)
      out[static_cast<size_t>(b)] =
          std::max(static_cast<double>(probs(b, targets(b))), kProbFloor);
  }

 private:
  const NnlmParams<S>* params_;
};

template <class S>
class FusedLm final : public Lm {
 public:
  explicit FusedLm(const DennParams<S>& params) : params_(&params) {}
  int32_t vocab_size() const override { return static_cast<int32_t>(params_->vocab_size()); }
  VecXd distribution(std::span<const int32_t> context) const override {
    VecXd p = fuse_predict(*params_, context).template cast<double>();
    return p.cwiseMax(kProbFloor);
  }
  void target_probs(const IdMat& contexts, const IdVec& targets,
                    std::span<double> out) const override {
    NGramBatch batch{contexts, targets};
    Mat<S> probs = fused_probs(*params_, batch);
    for (Index b = 0; b < targets.size(); ++b)
      out[static_cast<size_t>(b)] =
          std::max(static_cast<double>(probs(b, targets(b))), kProbFloor);
  }

 private:
  const DennParams<S>* params_;
};

/// Convex combination of component models with held-out-tuned weights.
class InterpolatedLm final : public Lm {
 public:
  InterpolatedLm(std::vector<const Lm*> components, VecXd lambda);
  int32_t vocab_size() const override { return components_.at(0)->vocab_size(); }
  VecXd distribution(std::span<const int32_t> context) const override;
  void target_probs(const IdMat& contexts, const IdVec& targets,
                    std::span<double> out) const override;

  const VecXd& weights() const { return lambda_; }
  double heldout_log2_likelihood() const { return heldout_ll_; }

 private:
  friend InterpolatedLm tune_interpolation(const std::vector<const Lm*>& models,
                                           std::span<const int32_t> heldout, int order,
                                           int32_t eos_id);
  std::vector<const Lm*> components_;
  VecXd lambda_;
  double heldout_ll_ = 0;
};

/// Tunes interpolation weights to maximize held-out log-likelihood: an
/// exhaustive 0.01 grid for two models, EM over mixture responsibilities
/// (50 iterations or dLL < 1e-6, corners included) for three or more. The
/// tuned held-out LL is >= that of every single component.
InterpolatedLm tune_interpolation(const std::vector<const Lm*>& models,
                                  std::span<const int32_t> heldout, int order,
                                  int32_t eos_id);

struct DiversityReport {
  MatXd correlation;          // pairwise Pearson r of target posteriors
  double mean_off_diagonal = 0;  // over defined pairs
  std::vector<std::string> errors;  // pairs with undefined correlation
};

/// Pearson correlation, across test positions, of the probabilities each
/// pair of models assigns to the realized next word.
DiversityReport posterior_correlation(const std::vector<const Lm*>& models,
                                      std::span<const int32_t> test, int order,
                                      int32_t eos_id);

/// Two-pass Pearson correlation; NaN when either side has zero variance.
double pearson(std::span<const double> x, std::span<const double> y);

struct ScatterRow {
  std::string run_id;
  double mean_posterior_corr;
  double pct_log_ppl_improvement;  // fused vs best single branch, log scale
  double fused_ppl;
  double best_branch_ppl;
};

struct ScatterTable {
  std::vector<ScatterRow> rows;
  std::optional<double> across_run_pearson;  // corr vs improvement, >= 2 runs
  std::string to_csv() const;
};

/// One row per trained multi-branch run: how correlated its branches'
/// posteriors are, and how much fusing them improves log perplexity over
/// the best single branch.
template <class S>
ScatterTable scatter_data(
    const std::vector<std::pair<std::string, const DennParams<S>*>>& runs,
    std::span<const int32_t> test, int32_t eos_id) {
  ScatterTable table;
  std::vector<double> corr_col, imp_col;
  for (const auto& [run_id, params] : runs) {
    if (params->branch_count() < 2)
      throw std::invalid_argument("scatter_data: runs need at least two branches");
    const int order = params->order();

    std::vector<NeuralLm<S>> branch_lms;
    branch_lms.reserve(params->branches.size());
    for (const auto& b : params->branches) branch_lms.emplace_back(b);
    std::vector<const Lm*> views;
    for (const auto& lm : branch_lms) views.push_back(&lm);
    DiversityReport div = posterior_correlation(views, test, order, eos_id);

    double best_ppl = 0;
    bool first = true;
    for (const auto& lm : branch_lms) {
      double ppl = perplexity(lm, test, order, eos_id).perplexity;
      if (first || ppl < best_ppl) best_ppl = ppl;
      first = false;
    }
    FusedLm<S> fused(*params);
    double fused_ppl = perplexity(fused, test, order, eos_id).perplexity;
    double pct = 100.0 * (std::log2(best_ppl) - std::log2(fused_ppl)) / std::log2(best_ppl);

    table.rows.push_back({run_id, div.mean_off_diagonal, pct, fused_ppl, best_ppl});
    corr_col.push_back(div.mean_off_diagonal);
    imp_col.push_back(pct);
  }
  if (table.rows.size() >= 2) {
    double r = pearson(corr_col, imp_col);
    if (std::isfinite(r)) table.across_run_pearson = r;
  }
  return table;
}

}  // namespace dennlm
