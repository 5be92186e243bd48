#pragma once

#include <cstdint>
#include <string>

#include "dennlm/denn.hpp"
#include "dennlm/ngram.hpp"

namespace dennlm {

// Model container: magic "DENN", u32 format version, length-prefixed JSON
// metadata (kind, dims, vocabulary hash), then the payload. Neural payloads
// are the parameter arrays in canonical order (alpha, then per branch:
// embed, hidden_w, hidden_b, out_w, out_b), row-major little-endian float32.
// N-gram payloads are the per-order raw count tables (packed key, count)
// sorted by key; the smoothed model is rebuilt deterministically on load.
inline constexpr uint32_t kModelFormatVersion = 1;

enum class ModelKind { kDenn, kNgram };

/// Reads just enough of a model file to tell its kind.
ModelKind peek_model_kind(const std::string& path);

/// FNV-1a 64 over a file's bytes; used to tie models to the vocabulary
/// they were trained with.
uint64_t file_hash(const std::string& path);

void save_denn_model(const std::string& path, const DennParams<float>& params,
                     uint64_t vocab_hash);
void save_denn_model(const std::string& path, const DennParams<double>& params,
                     uint64_t vocab_hash);

/// Loads a neural model saved by save_denn_model; float32 parameters are
/// widened to S. Throws on magic/version/kind mismatch.
template <class S>
DennParams<S> load_denn_model(const std::string& path, uint64_t* vocab_hash = nullptr);

void save_ngram_model(const std::string& path, const CountTable& counts,
                      uint64_t vocab_hash);
CountTable load_ngram_counts(const std::string& path, uint64_t* vocab_hash = nullptr);

}  // namespace dennlm
