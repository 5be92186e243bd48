#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dennlm/tensor.hpp"

namespace dennlm {

/// Token <-> word-id bijection. Id 0 is the sentence boundary, id 1 the
/// unknown word; the remaining ids are corpus tokens ranked by descending
/// frequency (ties broken lexicographically).
struct Vocabulary {
  static constexpr std::string_view kEosToken = "</s>";
  static constexpr std::string_view kUnkToken = "<unk>";

  std::unordered_map<std::string, int32_t> token_to_id;
  std::vector<std::string> id_to_token;
  int32_t eos_id = 0;
  int32_t unk_id = 1;

  int32_t size() const { return static_cast<int32_t>(id_to_token.size()); }

  int32_t lookup(std::string_view token) const {
    auto it = token_to_id.find(std::string(token));
    return it == token_to_id.end() ? unk_id : it->second;
  }
};

/// Id-encoded splits; every sentence ends with eos.
struct EncodedCorpus {
  std::vector<int32_t> train, valid, test;
};

/// A batch of prediction windows: row b predicts targets(b) from the
/// history contexts.row(b), stored oldest word first.
struct NGramBatch {
  IdMat contexts;  // B x (N-1)
  IdVec targets;   // B

  Index size() const { return targets.size(); }
  Index context_width() const { return contexts.cols(); }
};

/// Builds the vocabulary from whitespace-tokenized lines (one sentence per
/// line). `max_size` caps the total size including the two reserved ids;
/// tokens beyond the cap encode as unk. Throws on an all-empty corpus.
Vocabulary build_vocabulary(std::span<const std::string> lines,
                            std::optional<int32_t> max_size = std::nullopt);

/// Encodes lines to ids, appending eos per non-empty line. Unknown tokens
/// map to unk.
std::vector<int32_t> encode(std::span<const std::string> lines, const Vocabulary& vocab);

/// Inverse of encode for in-vocabulary ids.
std::vector<std::string> decode(std::span<const int32_t> ids, const Vocabulary& vocab);

/// One prediction window per token. Sentence starts are left-padded with
/// eos so the first words of each sentence are predicted too; after an eos
/// target the context resets. Requires order >= 2.
NGramBatch ngram_windows(std::span<const int32_t> ids, int order, int32_t eos_id);

/// Splits the windows into shuffled batches. Every window appears exactly
/// once; the permutation is a pure function of `seed`; the last batch may
/// be short.
std::vector<NGramBatch> make_batches(const NGramBatch& windows, Index batch_size,
                                     uint64_t seed);

// --- file plumbing ---

/// Reads a whole UTF-8 text file as lines. Throws with the path on failure.
std::vector<std::string> read_lines(const std::string& path);

/// Vocabulary file: one token per line, line number = word-id.
void save_vocabulary(const Vocabulary& vocab, const std::string& path);
Vocabulary load_vocabulary(const std::string& path);

/// Encoded id stream, little-endian int32.
void save_ids(std::span<const int32_t> ids, const std::string& path);
std::vector<int32_t> load_ids(const std::string& path);

}  // namespace dennlm
