#include "dennlm/ngram.hpp"

#include <algorithm>
#include <bit>
#include <stdexcept>

namespace dennlm {

int bits_for_vocab(int32_t vocab) {
  auto bits = static_cast<int>(std::bit_width(static_cast<uint32_t>(std::max(vocab - 1, 1))));
  return std::max(bits, 1);
}

namespace {

// Packs ids oldest-first; the newest id occupies the low bits.
uint64_t pack(std::span<const int32_t> gram, int bits) {
  uint64_t key = 0;
  for (int32_t id : gram) key = (key << bits) | static_cast<uint64_t>(id);
  return key;
}

}  // namespace

CountTable count_ngrams(std::span<const int32_t> ids, int order, int32_t vocab_size,
                        int32_t eos_id) {
  if (order < 1) throw std::invalid_argument("count_ngrams: order must be >= 1");
  if (ids.empty()) throw std::runtime_error("empty corpus");

  CountTable t;
  t.order = order;
  t.vocab_size = vocab_size;
  t.bits = bits_for_vocab(vocab_size);
  if (order * t.bits > 64)
    throw std::invalid_argument("count_ngrams: order too large for this vocabulary "
                                "(packed keys exceed 64 bits)");
  t.raw.resize(static_cast<size_t>(order));

  const uint64_t mask_all = (order * t.bits == 64) ? ~0ULL : ((1ULL << (order * t.bits)) - 1);
  // Rolling packed window over the padded stream; eos targets reset the
  // context exactly like ngram_windows does.
  uint64_t window = 0;
  for (int i = 0; i < order - 1; ++i) window = (window << t.bits) | static_cast<uint64_t>(eos_id);
  for (int32_t id : ids) {
    if (id < 0 || id >= vocab_size) throw std::out_of_range("count_ngrams: id out of range");
    window = ((window << t.bits) | static_cast<uint64_t>(id)) & mask_all;
    uint64_t suffix_mask = t.id_mask();
    for (int n = 1; n <= order; ++n) {
      ++t.raw[static_cast<size_t>(n - 1)][window & suffix_mask];
      if (n < order) suffix_mask = (suffix_mask << t.bits) | t.id_mask();
    }
    if (id == eos_id) {
      window = 0;
      for (int i = 0; i < order - 1; ++i)
        window = (window << t.bits) | static_cast<uint64_t>(eos_id);
    }
  }

  rebuild_derived_counts(t);
  return t;
}

void rebuild_derived_counts(CountTable& t) {
  // Continuation counts: one per distinct left extension.
  t.cont.assign(static_cast<size_t>(std::max(t.order - 1, 0)), {});
  for (int n = 1; n < t.order; ++n) {
    uint64_t suffix_mask = (n * t.bits == 64) ? ~0ULL : ((1ULL << (n * t.bits)) - 1);
    auto& dst = t.cont[static_cast<size_t>(n - 1)];
    for (const auto& [key, cnt] : t.raw[static_cast<size_t>(n)]) {
      (void)cnt;
      ++dst[key & suffix_mask];
    }
  }

  t.n1.assign(static_cast<size_t>(t.order), 0);
  t.n2.assign(static_cast<size_t>(t.order), 0);
  for (int n = 1; n <= t.order; ++n) {
    const auto& used = (n == t.order) ? t.raw[static_cast<size_t>(n - 1)]
                                      : t.cont[static_cast<size_t>(n - 1)];
    for (const auto& [key, cnt] : used) {
      (void)key;
      if (cnt == 1) ++t.n1[static_cast<size_t>(n - 1)];
      else if (cnt == 2) ++t.n2[static_cast<size_t>(n - 1)];
    }
  }
}

KneserNeyModel fit_kneser_ney(const CountTable& counts) {
  if (counts.order < 1) throw std::invalid_argument("fit_kneser_ney: empty count table");
  KneserNeyModel m;
  m.order_ = counts.order;
  m.vocab_ = counts.vocab_size;
  m.bits_ = counts.bits;

  m.discount_.resize(static_cast<size_t>(counts.order));
  for (int n = 1; n <= counts.order; ++n) {
    int64_t n1 = counts.n1[static_cast<size_t>(n - 1)];
    int64_t n2 = counts.n2[static_cast<size_t>(n - 1)];
    if (n1 == 0) {
      // n1 == 0 makes the estimator 0 (or undefined), which would strand
      // all mass at this order; fall back to the midpoint discount.
      m.discount_[static_cast<size_t>(n - 1)] = 0.5;
      m.warnings_.push_back("order " + std::to_string(n) +
                            ": degenerate count-of-counts (n1=" + std::to_string(n1) +
                            ", n2=" + std::to_string(n2) + "), using D=0.5");
    } else {
      m.discount_[static_cast<size_t>(n - 1)] =
          static_cast<double>(n1) / (static_cast<double>(n1) + 2.0 * static_cast<double>(n2));
    }
  }

  // Unigram with uniform floor.
  const auto& uni = (counts.order == 1) ? counts.raw[0] : counts.cont[0];
  double total = 0;
  int64_t types = 0;
  for (const auto& [key, cnt] : uni) {
    (void)key;
    total += static_cast<double>(cnt);
    ++types;
  }
  if (total <= 0) throw std::runtime_error("fit_kneser_ney: no unigram mass");
  const double d1 = m.discount_[0];
  const double uniform = 1.0 / static_cast<double>(m.vocab_);
  m.unigram_ = VecXd::Constant(m.vocab_, d1 * static_cast<double>(types) / total * uniform);
  for (const auto& [key, cnt] : uni) {
    auto w = static_cast<Index>(key);
    m.unigram_(w) += (static_cast<double>(cnt) - d1) / total;
  }

  // Group each order's used counts by context.
  m.ctx_.resize(static_cast<size_t>(std::max(counts.order - 1, 0)));
  for (int n = 2; n <= counts.order; ++n) {
    const double d = m.discount_[static_cast<size_t>(n - 1)];
    const auto& used = (n == counts.order) ? counts.raw[static_cast<size_t>(n - 1)]
                                           : counts.cont[static_cast<size_t>(n - 1)];
    auto& table = m.ctx_[static_cast<size_t>(n - 2)];
    for (const auto& [key, cnt] : used) {
      uint64_t ctx_key = key >> counts.bits;
      auto word = static_cast<int32_t>(key & counts.id_mask());
      auto& e = table[ctx_key];
      e.total += cnt;
      e.continuations.emplace_back(word, cnt);
    }
    for (auto& [key, e] : table) {
      (void)key;
      std::sort(e.continuations.begin(), e.continuations.end());
      e.backoff = d * static_cast<double>(e.continuations.size()) /
                  static_cast<double>(e.total);
    }
  }
  return m;
}

double KneserNeyModel::prob(std::span<const int32_t> context, int32_t word) const {
  if (word < 0 || word >= vocab_) throw std::out_of_range("KneserNeyModel::prob: bad word id");
  double p = unigram_(word);
  for (int n = 2; n <= order_; ++n) {
    const size_t width = static_cast<size_t>(n - 1);
    if (context.size() < width) break;
    uint64_t key = pack(context.subspan(context.size() - width, width), bits_);
    const auto& table = ctx_[static_cast<size_t>(n - 2)];
    auto it = table.find(key);
    if (it == table.end()) break;  // longer contexts cannot be present either
    const ContextEntry& e = it->second;
    const double d = discount_[static_cast<size_t>(n - 1)];
    auto hit = std::lower_bound(e.continuations.begin(), e.continuations.end(),
                                std::make_pair(word, int64_t{0}));
    double ml = 0;
    if (hit != e.continuations.end() && hit->first == word)
      ml = std::max(static_cast<double>(hit->second) - d, 0.0) / static_cast<double>(e.total);
    p = ml + e.backoff * p;
  }
  return p;
}

VecXd KneserNeyModel::distribution(std::span<const int32_t> context) const {
  VecXd v = unigram_;
  for (int n = 2; n <= order_; ++n) {
    const size_t width = static_cast<size_t>(n - 1);
    if (context.size() < width) break;
    uint64_t key = pack(context.subspan(context.size() - width, width), bits_);
    const auto& table = ctx_[static_cast<size_t>(n - 2)];
    auto it = table.find(key);
    if (it == table.end()) break;
    const ContextEntry& e = it->second;
    const double d = discount_[static_cast<size_t>(n - 1)];
    v *= e.backoff;
    for (const auto& [w, cnt] : e.continuations)
      v(w) += std::max(static_cast<double>(cnt) - d, 0.0) / static_cast<double>(e.total);
  }
  return v;
}

void export_counts_tsv(const CountTable& counts, const Vocabulary& vocab,
                       std::ostream& out) {
  for (int n = 1; n <= counts.order; ++n) {
    const auto& table = counts.raw[static_cast<size_t>(n - 1)];
    std::vector<std::pair<uint64_t, int64_t>> rows(table.begin(), table.end());
    std::sort(rows.begin(), rows.end());
    for (const auto& [key, cnt] : rows) {
      for (int k = n - 1; k >= 0; --k) {
        auto id = static_cast<int32_t>((key >> (k * counts.bits)) & counts.id_mask());
        out << vocab.id_to_token[static_cast<size_t>(id)];
        if (k > 0) out << ' ';
      }
      out << '\t' << cnt << '\n';
    }
  }
}

}  // namespace dennlm
