#include "dennlm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace dennlm {

namespace {
constexpr Index kEvalChunk = 512;
}

void Lm::target_probs(const IdMat& contexts, const IdVec& targets,
                      std::span<double> out) const {
  for (Index b = 0; b < targets.size(); ++b) {
    std::vector<int32_t> ctx(contexts.cols());
    for (Index k = 0; k < contexts.cols(); ++k) ctx[static_cast<size_t>(k)] = contexts(b, k);
    out[static_cast<size_t>(b)] = distribution(ctx)(targets(b));
  }
}

void KnLm::target_probs(const IdMat& contexts, const IdVec& targets,
                        std::span<double> out) const {
  std::vector<int32_t> ctx(contexts.cols());
  for (Index b = 0; b < targets.size(); ++b) {
    for (Index k = 0; k < contexts.cols(); ++k) ctx[static_cast<size_t>(k)] = contexts(b, k);
    out[static_cast<size_t>(b)] = model_->prob(ctx, targets(b));
  }
}

std::vector<double> target_probs(const Lm& model, std::span<const int32_t> ids,
                                 int order, int32_t eos_id) {
  NGramBatch windows = ngram_windows(ids, order, eos_id);
  const Index n = windows.size();
  std::vector<double> out(static_cast<size_t>(n));
  for (Index start = 0; start < n; start += kEvalChunk) {
    Index b_n = std::min(kEvalChunk, n - start);
    IdMat ctx = windows.contexts.middleRows(start, b_n);
    IdVec tgt = windows.targets.segment(start, b_n);
    model.target_probs(ctx, tgt, std::span<double>(out).subspan(static_cast<size_t>(start),
                                                                static_cast<size_t>(b_n)));
  }
  return out;
}

EvalReport perplexity(const Lm& model, std::span<const int32_t> ids, int order,
                      int32_t eos_id) {
  std::vector<double> probs = target_probs(model, ids, order, eos_id);
  EvalReport report;
  report.token_count = static_cast<int64_t>(probs.size());
  report.log2_probs.reserve(probs.size());
  double acc = 0;
  for (size_t i = 0; i < probs.size(); ++i) {
    if (!(probs[i] > 0))
      throw std::runtime_error("perplexity: zero probability at position " +
                               std::to_string(i));
    double lp = std::log2(probs[i]);
    report.log2_probs.push_back(lp);
    acc += lp;
  }
  report.mean_log2 = acc / static_cast<double>(report.token_count);
  report.perplexity = std::exp2(-report.mean_log2);
  return report;
}

InterpolatedLm::InterpolatedLm(std::vector<const Lm*> components, VecXd lambda)
    : components_(std::move(components)), lambda_(std::move(lambda)) {
  if (components_.empty() || lambda_.size() != static_cast<Index>(components_.size()))
    throw std::invalid_argument("InterpolatedLm: component/weight mismatch");
  for (const Lm* c : components_)
    if (c->vocab_size() != components_[0]->vocab_size())
      throw std::invalid_argument("InterpolatedLm: vocabulary size mismatch");
}

VecXd InterpolatedLm::distribution(std::span<const int32_t> context) const {
  VecXd out = VecXd::Zero(vocab_size());
  for (size_t m = 0; m < components_.size(); ++m)
    out += lambda_(static_cast<Index>(m)) * components_[m]->distribution(context);
  return out;
}

void InterpolatedLm::target_probs(const IdMat& contexts, const IdVec& targets,
                                  std::span<double> out) const {
  std::fill(out.begin(), out.end(), 0.0);
  std::vector<double> tmp(out.size());
  for (size_t m = 0; m < components_.size(); ++m) {
    components_[m]->target_probs(contexts, targets, tmp);
    const double w = lambda_(static_cast<Index>(m));
    for (size_t i = 0; i < out.size(); ++i) out[i] += w * tmp[i];
  }
}

namespace {

// Held-out log2-likelihood of a weighting over precomputed per-model
// target probabilities (rows: positions, cols: models).
double mixture_ll(const MatXd& probs, const VecXd& lambda) {
  double acc = 0;
  VecXd mixed = probs * lambda;
  for (Index i = 0; i < mixed.size(); ++i)
    acc += std::log2(std::max(mixed(i), kProbFloor));
  return acc;
}

}  // namespace

InterpolatedLm tune_interpolation(const std::vector<const Lm*>& models,
                                  std::span<const int32_t> heldout, int order,
                                  int32_t eos_id) {
  if (models.size() < 2)
    throw std::invalid_argument("tune_interpolation: need at least two models");
  const auto m_n = static_cast<Index>(models.size());

  MatXd probs(0, 0);
  for (Index m = 0; m < m_n; ++m) {
    std::vector<double> col = target_probs(*models[static_cast<size_t>(m)], heldout,
                                           order, eos_id);
    if (probs.rows() == 0) probs.resize(static_cast<Index>(col.size()), m_n);
    probs.col(m) = Eigen::Map<const VecXd>(col.data(), static_cast<Index>(col.size()));
  }

  VecXd best_lambda;
  double best_ll = -std::numeric_limits<double>::infinity();
  if (m_n == 2) {
    // Exhaustive grid; ties resolve toward the center.
    std::vector<double> lls(101);
    double max_ll = -std::numeric_limits<double>::infinity();
    for (int i = 0; i <= 100; ++i) {
      VecXd lambda(2);
      lambda << i / 100.0, 1.0 - i / 100.0;
      lls[static_cast<size_t>(i)] = mixture_ll(probs, lambda);
      max_ll = std::max(max_ll, lls[static_cast<size_t>(i)]);
    }
    const double tol = 1e-12 * std::max(1.0, std::abs(max_ll));
    int best_i = 0;
    double best_dist = 2.0;
    for (int i = 0; i <= 100; ++i) {
      if (lls[static_cast<size_t>(i)] < max_ll - tol) continue;
      double dist = std::abs(i / 100.0 - 0.5);
      if (dist < best_dist) {
        best_dist = dist;
        best_i = i;
      }
    }
    best_lambda = VecXd(2);
    best_lambda << best_i / 100.0, 1.0 - best_i / 100.0;
    best_ll = lls[static_cast<size_t>(best_i)];
  } else {
    // EM on mixture responsibilities; the objective is concave in lambda.
    VecXd lambda = VecXd::Constant(m_n, 1.0 / static_cast<double>(m_n));
    double prev_ll = mixture_ll(probs, lambda);
    for (int iter = 0; iter < 50; ++iter) {
      VecXd resp = VecXd::Zero(m_n);
      for (Index i = 0; i < probs.rows(); ++i) {
        VecXd contrib = probs.row(i).transpose().cwiseProduct(lambda);
        double denom = contrib.sum();
        if (denom > 0) resp += contrib / denom;
      }
      lambda = resp / static_cast<double>(probs.rows());
      double ll = mixture_ll(probs, lambda);
      if (std::abs(ll - prev_ll) < 1e-6) {
        prev_ll = ll;
        break;
      }
      prev_ll = ll;
    }
    best_lambda = lambda;
    best_ll = prev_ll;
    // The optimum may sit on a corner EM only approaches.
    for (Index m = 0; m < m_n; ++m) {
      VecXd corner = VecXd::Zero(m_n);
      corner(m) = 1.0;
      double ll = mixture_ll(probs, corner);
      if (ll > best_ll) {
        best_ll = ll;
        best_lambda = corner;
      }
    }
  }

  InterpolatedLm out(models, best_lambda);
  out.heldout_ll_ = best_ll;
  return out;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2)
    throw std::invalid_argument("pearson: need two equal-length series");
  const auto n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0 || syy == 0) return std::numeric_limits<double>::quiet_NaN();
  return sxy / std::sqrt(sxx * syy);
}

DiversityReport posterior_correlation(const std::vector<const Lm*>& models,
                                      std::span<const int32_t> test, int order,
                                      int32_t eos_id) {
  if (models.size() < 2)
    throw std::invalid_argument("posterior_correlation: need at least two models");
  const auto m_n = static_cast<Index>(models.size());

  std::vector<std::vector<double>> posteriors;
  posteriors.reserve(models.size());
  for (const Lm* m : models) posteriors.push_back(target_probs(*m, test, order, eos_id));

  DiversityReport report;
  report.correlation = MatXd::Identity(m_n, m_n);
  double acc = 0;
  int64_t defined = 0;
  for (Index i = 0; i < m_n; ++i) {
    for (Index j = i + 1; j < m_n; ++j) {
      double r = pearson(posteriors[static_cast<size_t>(i)], posteriors[static_cast<size_t>(j)]);
      report.correlation(i, j) = r;
      report.correlation(j, i) = r;
      if (std::isnan(r)) {
        report.errors.push_back("correlation undefined for pair (" + std::to_string(i) +
                                "," + std::to_string(j) + "): zero variance");
      } else {
        acc += r;
        ++defined;
      }
    }
  }
  report.mean_off_diagonal = defined > 0 ? acc / static_cast<double>(defined)
                                         : std::numeric_limits<double>::quiet_NaN();
  return report;
}

std::string ScatterTable::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "run_id,mean_posterior_corr,pct_log_ppl_improvement,fused_ppl,best_branch_ppl\n";
  for (const auto& r : rows)
    out << r.run_id << ',' << r.mean_posterior_corr << ',' << r.pct_log_ppl_improvement
        << ',' << r.fused_ppl << ',' << r.best_branch_ppl << '\n';
  if (across_run_pearson)
    out << "# across_run_pearson," << *across_run_pearson << '\n';
  return out.str();
}

}  // namespace dennlm
