#pragma once

#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "dennlm/corpus.hpp"
#include "dennlm/tensor.hpp"

namespace dennlm {

/// Exact n-gram counts over the padded window stream, all orders 1..N.
/// Grams are packed into 64-bit keys (fixed bits per id), which bounds the
/// usable order by the vocabulary size; 10K words allow up to 5-grams.
/// Bits needed to pack one word id of a V-word vocabulary.
int bits_for_vocab(int32_t vocab);

struct CountTable {
  int order = 0;
  int32_t vocab_size = 0;
  int bits = 0;  // bits per id in packed keys

  // raw[n-1]: order-n gram -> occurrence count.
  std::vector<std::unordered_map<uint64_t, int64_t>> raw;
  // cont[n-1] for n < order: order-n gram -> distinct left-context count,
  // derived from raw order-(n+1) types.
  std::vector<std::unordered_map<uint64_t, int64_t>> cont;
  // Count-of-counts per order, taken over the counts each order actually
  // uses (raw at the top order, continuation below).
  std::vector<int64_t> n1, n2;

  uint64_t id_mask() const { return (bits >= 64) ? ~0ULL : ((1ULL << bits) - 1); }
};

/// Interpolated Kneser-Ney model: one absolute discount per order,
/// continuation counts below the top order, uniform 1/V floor under the
/// unigram. Immutable once fitted; queries are thread-safe.
class KneserNeyModel {
 public:
  struct ContextEntry {
    int64_t total = 0;
    double backoff = 0;  // D * n1plus / total
    std::vector<std::pair<int32_t, int64_t>> continuations;  // sorted by word id
  };

  int order() const { return order_; }
  int32_t vocab_size() const { return vocab_; }
  const std::vector<double>& discounts() const { return discount_; }
  const std::vector<std::string>& warnings() const { return warnings_; }

  /// P(w | context). Uses the last order-1 ids of `context` (fewer are
  /// allowed and back the query off to the matching lower order).
  double prob(std::span<const int32_t> context, int32_t word) const;

  /// Full next-word distribution; strictly positive, sums to 1.
  VecXd distribution(std::span<const int32_t> context) const;

 private:
  friend KneserNeyModel fit_kneser_ney(const CountTable& counts);

  int order_ = 0;
  int32_t vocab_ = 0;
  int bits_ = 0;
  std::vector<double> discount_;  // per order 1..N
  VecXd unigram_;                 // order-1 distribution incl. uniform floor
  // ctx_[n-2] for order n in 2..N: packed context -> entry.
  std::vector<std::unordered_map<uint64_t, ContextEntry>> ctx_;
  std::vector<std::string> warnings_;
};

/// Counts all orders 1..N over the eos-padded window stream (the same
/// stream the neural models train on). Throws on an empty corpus.
CountTable count_ngrams(std::span<const int32_t> ids, int order, int32_t vocab_size,
                        int32_t eos_id);

/// Recomputes continuation counts and count-of-counts from the raw tables
/// (used after counting and after deserialization).
void rebuild_derived_counts(CountTable& counts);

/// Fits the interpolated model with per-order discount D = n1/(n1 + 2 n2).
/// Degenerate orders (n1 == 0) fall back to D = 0.5 with a warning record.
KneserNeyModel fit_kneser_ney(const CountTable& counts);

/// Free-function form of KneserNeyModel::distribution.
inline VecXd kn_distribution(const KneserNeyModel& model, std::span<const int32_t> context) {
  return model.distribution(context);
}

/// Counts as text: one gram per line, tokens TAB count, sorted per order.
void export_counts_tsv(const CountTable& counts, const Vocabulary& vocab,
                       std::ostream& out);

}  // namespace dennlm
