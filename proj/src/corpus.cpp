#include "dennlm/corpus.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <fstream>
#include <stdexcept>

#include "dennlm/rng.hpp"

namespace dennlm {

namespace {

std::vector<std::string_view> split_tokens(const std::string& line) {
  std::vector<std::string_view> out;
  size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.push_back(std::string_view(line).substr(i, j - i));
    i = j;
  }
  return out;
}

}  // namespace

Vocabulary build_vocabulary(std::span<const std::string> lines,
                            std::optional<int32_t> max_size) {
  if (max_size && *max_size < 2)
    throw std::invalid_argument("build_vocabulary: max_size must be >= 2");

  std::unordered_map<std::string, int64_t> counts;
  int64_t total = 0;
  for (const auto& line : lines) {
    for (auto tok : split_tokens(line)) {
      if (tok == Vocabulary::kEosToken || tok == Vocabulary::kUnkToken) {
        ++total;  // reserved ids already cover these
        continue;
      }
      ++counts[std::string(tok)];
      ++total;
    }
  }
  if (total == 0) throw std::runtime_error("empty corpus");

  std::vector<std::pair<std::string, int64_t>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  Vocabulary vocab;
  vocab.id_to_token.emplace_back(Vocabulary::kEosToken);
  vocab.id_to_token.emplace_back(Vocabulary::kUnkToken);
  size_t keep = ranked.size();
  if (max_size) keep = std::min<size_t>(keep, static_cast<size_t>(*max_size - 2));
  for (size_t i = 0; i < keep; ++i) vocab.id_to_token.push_back(ranked[i].first);
  for (int32_t id = 0; id < static_cast<int32_t>(vocab.id_to_token.size()); ++id)
    vocab.token_to_id[vocab.id_to_token[static_cast<size_t>(id)]] = id;
  return vocab;
}

std::vector<int32_t> encode(std::span<const std::string> lines, const Vocabulary& vocab) {
  std::vector<int32_t> ids;
  for (const auto& line : lines) {
    auto toks = split_tokens(line);
    if (toks.empty()) continue;
    for (auto tok : toks) ids.push_back(vocab.lookup(tok));
    ids.push_back(vocab.eos_id);
  }
  return ids;
}

std::vector<std::string> decode(std::span<const int32_t> ids, const Vocabulary& vocab) {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int32_t id : ids) {
    if (id < 0 || id >= vocab.size())
      throw std::out_of_range("decode: word id out of range");
    out.push_back(vocab.id_to_token[static_cast<size_t>(id)]);
  }
  return out;
}

NGramBatch ngram_windows(std::span<const int32_t> ids, int order, int32_t eos_id) {
  if (order < 2) throw std::invalid_argument("ngram_windows: order must be >= 2");
  const Index width = order - 1;
  NGramBatch out;
  out.contexts.resize(static_cast<Index>(ids.size()), width);
  out.targets.resize(static_cast<Index>(ids.size()));

  std::vector<int32_t> context(static_cast<size_t>(width), eos_id);
  Index row = 0;
  for (int32_t id : ids) {
    for (Index k = 0; k < width; ++k) out.contexts(row, k) = context[static_cast<size_t>(k)];
    out.targets(row) = id;
    ++row;
    if (id == eos_id) {
      std::fill(context.begin(), context.end(), eos_id);
    } else {
      context.erase(context.begin());
      context.push_back(id);
    }
  }
  return out;
}

std::vector<NGramBatch> make_batches(const NGramBatch& windows, Index batch_size,
                                     uint64_t seed) {
  if (batch_size < 1) throw std::invalid_argument("make_batches: batch_size must be >= 1");
  const Index n = windows.size();
  Rng rng(seed);
  std::vector<int64_t> perm = rng.permutation(n);

  std::vector<NGramBatch> batches;
  for (Index start = 0; start < n; start += batch_size) {
    Index b = std::min(batch_size, n - start);
    NGramBatch batch;
    batch.contexts.resize(b, windows.context_width());
    batch.targets.resize(b);
    for (Index i = 0; i < b; ++i) {
      Index src = perm[static_cast<size_t>(start + i)];
      batch.contexts.row(i) = windows.contexts.row(src);
      batch.targets(i) = windows.targets(src);
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

void save_vocabulary(const Vocabulary& vocab, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  for (const auto& tok : vocab.id_to_token) out << tok << '\n';
}

Vocabulary load_vocabulary(const std::string& path) {
  auto lines = read_lines(path);
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  Vocabulary vocab;
  vocab.id_to_token = lines;
  if (vocab.id_to_token.size() < 2 ||
      vocab.id_to_token[0] != Vocabulary::kEosToken ||
      vocab.id_to_token[1] != Vocabulary::kUnkToken)
    throw std::runtime_error("malformed vocabulary file: " + path);
  for (int32_t id = 0; id < vocab.size(); ++id)
    vocab.token_to_id[vocab.id_to_token[static_cast<size_t>(id)]] = id;
  return vocab;
}

void save_ids(std::span<const int32_t> ids, const std::string& path) {
  static_assert(std::endian::native == std::endian::little,
                "id files are little-endian");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out.write(reinterpret_cast<const char*>(ids.data()),
            static_cast<std::streamsize>(ids.size() * sizeof(int32_t)));
}

std::vector<int32_t> load_ids(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  auto bytes = static_cast<size_t>(in.tellg());
  if (bytes % sizeof(int32_t) != 0)
    throw std::runtime_error("truncated id file: " + path);
  std::vector<int32_t> ids(bytes / sizeof(int32_t));
  in.seekg(0);
  in.read(reinterpret_cast<char*>(ids.data()), static_cast<std::streamsize>(bytes));
  return ids;
}

}  // namespace dennlm
