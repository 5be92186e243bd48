#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dennlm {

/// Deterministic benchmark corpus: a latent-class Markov chain over a
/// Zipf-distributed vocabulary, written as whitespace-tokenized sentences.
/// Stands in for a treebank subset when no real corpus is mounted.
struct SynthSpec {
  int32_t vocab_types = 2000;      // distinct word types to generate
  int64_t train_tokens = 100000;   // approximate, rounded up to sentence ends
  int64_t valid_tokens = 10000;
  int64_t test_tokens = 10000;
  int classes = 24;                // latent classes driving transitions
  double zipf_exponent = 1.05;
  uint64_t seed = 7;
};

/// Generates the three splits in memory (one sentence per line).
struct SynthCorpus {
  std::vector<std::string> train, valid, test;
};
SynthCorpus make_synth_corpus(const SynthSpec& spec);

/// Writes train.txt, valid.txt, test.txt under `dir` (created if needed).
void write_synth_corpus(const SynthSpec& spec, const std::string& dir);

}  // namespace dennlm
