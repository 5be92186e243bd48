#include "dennlm/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "dennlm/rng.hpp"

namespace dennlm {

namespace {

// Word sampler for one latent class: members share the global Zipf weights,
// renormalized within the class.
struct ClassWords {
  std::vector<int32_t> words;
  std::vector<double> cdf;

  int32_t sample(Rng& rng) const {
    double u = rng.next_double() * cdf.back();
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    size_t i = std::min(static_cast<size_t>(it - cdf.begin()), words.size() - 1);
    return words[i];
  }
};

struct Generator {
  int classes;
  std::vector<ClassWords> class_words;
  // Row-stochastic transition preferences; the next class mixes the
  // previous class's row with the one before it, so 4-gram context
  // carries signal beyond a plain bigram.
  std::vector<std::vector<double>> trans1, trans2;

  explicit Generator(const SynthSpec& spec) : classes(spec.classes) {
    if (spec.vocab_types < spec.classes || spec.classes < 2)
      throw std::invalid_argument("synth: need vocab_types >= classes >= 2");
    Rng rng(derive_seed(spec.seed, 0xC0));

    class_words.resize(static_cast<size_t>(classes));
    for (int32_t w = 0; w < spec.vocab_types; ++w) {
      auto c = static_cast<size_t>(mix64(derive_seed(spec.seed, 0xA0) ^ static_cast<uint64_t>(w)) %
                                   static_cast<uint64_t>(classes));
      double weight = 1.0 / std::pow(static_cast<double>(w) + 2.0, spec.zipf_exponent);
      auto& cw = class_words[c];
      cw.words.push_back(w);
      cw.cdf.push_back((cw.cdf.empty() ? 0.0 : cw.cdf.back()) + weight);
    }
    for (auto& cw : class_words)
      if (cw.words.empty())
        throw std::runtime_error("synth: empty class, raise vocab_types");

    auto random_rows = [&](std::vector<std::vector<double>>& rows, double sharpness) {
      rows.assign(static_cast<size_t>(classes), std::vector<double>(static_cast<size_t>(classes)));
      for (auto& row : rows) {
        double sum = 0;
        for (auto& v : row) {
          v = std::exp(sharpness * rng.gaussian());
          sum += v;
        }
        for (auto& v : row) v /= sum;
      }
    };
    random_rows(trans1, 1.6);
    random_rows(trans2, 1.0);
  }

  int sample_class(Rng& rng, int prev1, int prev2) const {
    double u = rng.next_double();
    double acc = 0, norm = 0;
    const auto& r1 = trans1[static_cast<size_t>(prev1)];
    const auto& r2 = trans2[static_cast<size_t>(prev2)];
    for (int c = 0; c < classes; ++c)
      norm += r1[static_cast<size_t>(c)] * r2[static_cast<size_t>(c)];
    for (int c = 0; c < classes; ++c) {
      acc += r1[static_cast<size_t>(c)] * r2[static_cast<size_t>(c)] / norm;
      if (u < acc) return c;
    }
    return classes - 1;
  }

  std::vector<std::string> sentences(Rng& rng, int64_t token_budget) const {
    std::vector<std::string> lines;
    int64_t emitted = 0;
    while (emitted < token_budget) {
      int len = 4 + static_cast<int>(std::min<uint64_t>(
                        static_cast<uint64_t>(-std::log(1.0 - rng.next_double()) * 14.0), 48));
      int prev1 = static_cast<int>(rng.below(static_cast<uint64_t>(classes)));
      int prev2 = static_cast<int>(rng.below(static_cast<uint64_t>(classes)));
      std::string line;
      for (int i = 0; i < len; ++i) {
        int c = sample_class(rng, prev1, prev2);
        int32_t w = class_words[static_cast<size_t>(c)].sample(rng);
        if (!line.empty()) line += ' ';
        line += 'w' + std::to_string(w);
        prev2 = prev1;
        prev1 = c;
      }
      emitted += len;
      lines.push_back(std::move(line));
    }
    return lines;
  }
};

}  // namespace

SynthCorpus make_synth_corpus(const SynthSpec& spec) {
  Generator gen(spec);
  SynthCorpus corpus;
  Rng train_rng(derive_seed(spec.seed, 1));
  Rng valid_rng(derive_seed(spec.seed, 2));
  Rng test_rng(derive_seed(spec.seed, 3));
  corpus.train = gen.sentences(train_rng, spec.train_tokens);
  corpus.valid = gen.sentences(valid_rng, spec.valid_tokens);
  corpus.test = gen.sentences(test_rng, spec.test_tokens);
  return corpus;
}

void write_synth_corpus(const SynthSpec& spec, const std::string& dir) {
  SynthCorpus corpus = make_synth_corpus(spec);
  std::filesystem::create_directories(dir);
  auto dump = [&](const std::vector<std::string>& lines, const std::string& name) {
    std::ofstream out(dir + "/" + name, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + dir + "/" + name);
    for (const auto& line : lines) out << line << '\n';
  };
  dump(corpus.train, "train.txt");
  dump(corpus.valid, "valid.txt");
  dump(corpus.test, "test.txt");
}

}  // namespace dennlm
