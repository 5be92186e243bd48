// End-to-end checks of the command-line pipeline: prepare / train / eval /
// gridsearch on a small generated corpus, artifact determinism, and the
// config and vocabulary-hash guards.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dennlm/synth.hpp"

namespace fs = std::filesystem;

namespace {

const char* cli() { return DENNLM_CLI_PATH; }

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::path("cli_scratch") / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& sub) const { return (path / sub).string(); }
};

int run(const std::string& args) {
  return std::system((std::string(cli()) + " " + args + " >/dev/null 2>&1").c_str());
}

std::string run_capture(const std::string& args) {
  std::string out_file = "cli_scratch/capture.txt";
  std::system((std::string(cli()) + " " + args + " >" + out_file + " 2>&1").c_str());
  std::ifstream in(out_file);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

// Small corpus + config shared by the pipeline tests.
void setup_corpus(const TempDir& dir) {
  dennlm::SynthSpec spec;
  spec.vocab_types = 60;
  spec.train_tokens = 4000;
  spec.valid_tokens = 800;
  spec.test_tokens = 800;
  spec.seed = 11;
  dennlm::write_synth_corpus(spec, dir / "corpus");
}

std::string base_config(const TempDir& dir, const std::string& extra = "") {
  std::ostringstream cfg;
  cfg << R"({
  "data": {
    "train": ")" << (dir / "corpus/train.txt") << R"(",
    "valid": ")" << (dir / "corpus/valid.txt") << R"(",
    "test": ")" << (dir / "corpus/test.txt") << R"(",
    "vocab_cap": 50,
    "dir": ")" << (dir / "prep") << R"("
  },
  "model": {"order": 3, "branches": [[4, 6], [4, 6]]},
  "loss": {"beta": 0.5, "gamma": 1.0, "sample_size": 16},
  "optim": {"learning_rate": 0.05, "batch_size": 64, "max_epochs": 2, "patience": 2},
  "seed": 3,
  "out_dir": ")" << (dir / "run") << R"(")" << extra << R"(
})";
  std::string path = dir / "config.json";
  write(path, cfg.str());
  return path;
}

}  // namespace

TEST_CASE("prepare builds artifacts and is byte-idempotent") {
  TempDir dir("prepare");
  setup_corpus(dir);
  std::string cfg = base_config(dir);
  REQUIRE(run("prepare --config " + cfg) == 0);
  CHECK(fs::exists(dir / "prep/vocab.txt"));
  CHECK(fs::exists(dir / "prep/train.bin"));
  CHECK(fs::exists(dir / "prep/meta.json"));

  std::string vocab_before = slurp(dir / "prep/vocab.txt");
  std::string train_before = slurp(dir / "prep/train.bin");
  REQUIRE(run("prepare --config " + cfg) == 0);
  CHECK(slurp(dir / "prep/vocab.txt") == vocab_before);
  CHECK(slurp(dir / "prep/train.bin") == train_before);

  // vocab cap respected: 50 lines in the vocabulary file
  std::istringstream lines(vocab_before);
  int count = 0;
  std::string line;
  while (std::getline(lines, line)) ++count;
  CHECK(count == 50);
}

TEST_CASE("prepare fails loudly on a missing file") {
  TempDir dir("prepare_missing");
  setup_corpus(dir);
  std::string cfg = base_config(dir);
  fs::remove(dir / "corpus/valid.txt");
  std::string out = run_capture("prepare --config " + cfg);
  CHECK(out.find("missing file") != std::string::npos);
  CHECK(out.find("valid.txt") != std::string::npos);
}

TEST_CASE("train, eval, and rerun determinism") {
  TempDir dir("train");
  setup_corpus(dir);
  std::string cfg = base_config(dir);
  REQUIRE(run("prepare --config " + cfg) == 0);
  REQUIRE(run("train --config " + cfg) == 0);
  REQUIRE(fs::exists(dir / "run/model.denn"));
  REQUIRE(fs::exists(dir / "run/train_log.csv"));

  std::string model_bytes = slurp(dir / "run/model.denn");
  std::string log_bytes = slurp(dir / "run/train_log.csv");
  REQUIRE(run("train --config " + cfg + " --out " + (dir / "run2")) == 0);
  CHECK(slurp(dir / "run2/model.denn") == model_bytes);
  CHECK(slurp(dir / "run2/train_log.csv") == log_bytes);

  // a different seed changes the model
  REQUIRE(run("train --config " + cfg + " --seed 99 --out " + (dir / "run3")) == 0);
  CHECK(slurp(dir / "run3/model.denn") != model_bytes);

  // n-gram training and evaluation of both kinds together
  REQUIRE(run("train --config " + cfg + " --kind ngram --out " + (dir / "kn") +
              " --export-counts " + (dir / "kn/counts.tsv")) == 0);
  REQUIRE(fs::exists(dir / "kn/model.ngram"));
  CHECK(slurp(dir / "kn/counts.tsv").find('\t') != std::string::npos);

  std::string report = run_capture(
      "eval " + (dir / "run/model.denn") + " " + (dir / "kn/model.ngram") +
      " --vocab " + (dir / "prep/vocab.txt") + " --test " + (dir / "corpus/test.txt") +
      " --heldout " + (dir / "corpus/valid.txt") + " --interpolate --correlate");
  CHECK(report.find("ppl,") != std::string::npos);
  CHECK(report.find("interp_ppl,combined") != std::string::npos);
  CHECK(report.find("posterior_corr_mean") != std::string::npos);

  // eval report files are byte-identical across reruns
  REQUIRE(run("eval " + (dir / "run/model.denn") + " --vocab " + (dir / "prep/vocab.txt") +
              " --test " + (dir / "corpus/test.txt") + " --out " + (dir / "r1.csv")) == 0);
  REQUIRE(run("eval " + (dir / "run/model.denn") + " --vocab " + (dir / "prep/vocab.txt") +
              " --test " + (dir / "corpus/test.txt") + " --out " + (dir / "r2.csv")) == 0);
  CHECK(slurp(dir / "r1.csv") == slurp(dir / "r2.csv"));
}

TEST_CASE("config validation rejects a bad beta before any work") {
  TempDir dir("badcfg");
  setup_corpus(dir);
  std::string cfg = base_config(dir);
  std::string text = slurp(cfg);
  auto pos = text.find("\"beta\": 0.5");
  REQUIRE(pos != std::string::npos);
  text.replace(pos, 11, "\"beta\": 1.5");
  write(cfg, text);
  std::string out = run_capture("train --config " + cfg);
  CHECK(out.find("beta") != std::string::npos);
  CHECK(!fs::exists(dir / "run/model.denn"));
}

TEST_CASE("vocabulary hash mismatches are refused") {
  TempDir dir("hash");
  setup_corpus(dir);
  std::string cfg = base_config(dir);
  REQUIRE(run("prepare --config " + cfg) == 0);
  REQUIRE(run("train --config " + cfg) == 0);

  // evaluate against a doctored vocabulary
  std::string vocab2 = dir / "othervocab.txt";
  std::string v = slurp(dir / "prep/vocab.txt");
  write(vocab2, v + "extraword\n");
  std::string out = run_capture("eval " + (dir / "run/model.denn") + " --vocab " + vocab2 +
                                " --test " + (dir / "corpus/test.txt"));
  CHECK(out.find("hash mismatch") != std::string::npos);
}

TEST_CASE("gridsearch trains every point and emits scatter rows") {
  TempDir dir("grid");
  setup_corpus(dir);
  std::string cfg =
      base_config(dir, R"(,
  "grid": {"gamma": [0.0, 2.0], "learning_rate": [0.03, 0.08]})");
  REQUIRE(run("prepare --config " + cfg) == 0);
  REQUIRE(run("gridsearch --config " + cfg + " --jobs 2 --out " + (dir / "grid")) == 0);
  std::string scatter = slurp(dir / "grid/scatter.csv");
  int rows = 0;
  std::istringstream ss(scatter);
  std::string line;
  while (std::getline(ss, line))
    if (line.rfind("r0", 0) == 0) ++rows;
  CHECK(rows == 4);
  CHECK(scatter.find("across_run_pearson") != std::string::npos);

  // rerun reproduces the CSV byte for byte
  REQUIRE(run("gridsearch --config " + cfg + " --jobs 1 --out " + (dir / "grid2")) == 0);
  std::string again = slurp(dir / "grid2/scatter.csv");
  CHECK(again == scatter);
}

TEST_CASE("single-point grid has no across-run correlation") {
  TempDir dir("grid1");
  setup_corpus(dir);
  std::string cfg = base_config(dir);
  REQUIRE(run("prepare --config " + cfg) == 0);
  REQUIRE(run("gridsearch --config " + cfg + " --out " + (dir / "grid")) == 0);
  std::string scatter = slurp(dir / "grid/scatter.csv");
  CHECK(scatter.find("across_run_pearson") == std::string::npos);
  int rows = 0;
  std::istringstream ss(scatter);
  std::string line;
  while (std::getline(ss, line))
    if (line.rfind("r0", 0) == 0) ++rows;
  CHECK(rows == 1);
}
