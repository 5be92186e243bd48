// Command-line front end: data preparation, training, evaluation,
// interpolation/diversity reports, and grid search over the loss and
// optimizer hyperparameters. Every command is a pure function of its
// inputs, config, and seed, so reruns reproduce outputs byte for byte.

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <mutex>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dennlm/config.hpp"
#include "dennlm/corpus.hpp"
#include "dennlm/eval.hpp"
#include "dennlm/ngram.hpp"
#include "dennlm/optim.hpp"
#include "dennlm/serialize.hpp"
#include "dennlm/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dennlm;

namespace {

int precision_from_env() {
  const char* p = std::getenv("DENNLM_PRECISION");
  if (!p || std::string(p) == "32") return 32;
  if (std::string(p) == "64") return 64;
  throw std::runtime_error("DENNLM_PRECISION must be 32 or 64");
}

void require_file(const std::string& path) {
  if (!fs::exists(path)) throw std::runtime_error("missing file: " + path);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out << text;
}

std::string format_double(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

// --- prepare ---

int cmd_prepare(const RunConfig& cfg, const std::string& out_override) {
  std::string dir = out_override.empty() ? cfg.data_dir : out_override;
  if (dir.empty()) throw std::runtime_error("prepare: no output directory (data.dir or --out)");
  require_file(cfg.train_path);
  require_file(cfg.valid_path);
  require_file(cfg.test_path);
  fs::create_directories(dir);

  auto train_lines = read_lines(cfg.train_path);
  Vocabulary vocab = build_vocabulary(train_lines, cfg.vocab_cap);
  save_vocabulary(vocab, dir + "/vocab.txt");
  uint64_t vhash = file_hash(dir + "/vocab.txt");

  auto train_ids = encode(train_lines, vocab);
  auto valid_ids = encode(read_lines(cfg.valid_path), vocab);
  auto test_ids = encode(read_lines(cfg.test_path), vocab);
  save_ids(train_ids, dir + "/train.bin");
  save_ids(valid_ids, dir + "/valid.bin");
  save_ids(test_ids, dir + "/test.bin");

  json meta;
  meta["vocab_size"] = vocab.size();
  meta["vocab_hash"] = [&] {
    std::ostringstream s;
    s << std::hex << vhash;
    return s.str();
  }();
  meta["train_tokens"] = train_ids.size();
  meta["valid_tokens"] = valid_ids.size();
  meta["test_tokens"] = test_ids.size();
  write_text(dir + "/meta.json", meta.dump(2) + "\n");

  std::cout << "prepared " << dir << ": V=" << vocab.size() << ", train tokens "
            << train_ids.size() << ", valid " << valid_ids.size() << ", test "
            << test_ids.size() << "\n";
  return 0;
}

// --- train ---

struct PreparedData {
  Vocabulary vocab;
  uint64_t vocab_hash = 0;
  std::vector<int32_t> train, valid, test;
};

PreparedData load_prepared(const std::string& dir) {
  require_file(dir + "/vocab.txt");
  PreparedData d;
  d.vocab = load_vocabulary(dir + "/vocab.txt");
  d.vocab_hash = file_hash(dir + "/vocab.txt");
  d.train = load_ids(dir + "/train.bin");
  d.valid = load_ids(dir + "/valid.bin");
  d.test = load_ids(dir + "/test.bin");
  return d;
}

template <class S>
void train_denn_to_dir(const RunConfig& cfg, const PreparedData& data,
                       const std::string& out_dir, uint64_t seed) {
  if (cfg.branches.empty())
    throw std::runtime_error("train: config declares no branches");
  DennParams<S> model =
      init_denn<S>(cfg.order, cfg.branches, data.vocab.size(),
                   activation_from_string(cfg.activation), seed);
  if (cfg.alpha) {
    model.alpha = Eigen::Map<const VecXd>(cfg.alpha->data(),
                                          static_cast<Index>(cfg.alpha->size()));
  }
  auto [best, log] =
      train(std::move(model), data.train, data.valid, cfg.loss, cfg.optim, seed,
            data.vocab.eos_id);
  fs::create_directories(out_dir);
  save_denn_model(out_dir + "/model.denn", best, data.vocab_hash);
  write_text(out_dir + "/train_log.csv", log.to_csv());
  std::cout << "trained " << out_dir << "/model.denn: best held-out ppl "
            << log.best_heldout_ppl << " at epoch " << log.best_epoch << "\n";
}

int cmd_train(const RunConfig& cfg, const std::string& kind,
              const std::string& out_override, uint64_t seed,
              const std::string& export_counts) {
  std::string out_dir = out_override.empty() ? cfg.out_dir : out_override;
  if (out_dir.empty()) throw std::runtime_error("train: no output directory");
  PreparedData data = load_prepared(cfg.data_dir);

  if (kind == "ngram") {
    CountTable counts =
        count_ngrams(data.train, cfg.order, data.vocab.size(), data.vocab.eos_id);
    fs::create_directories(out_dir);
    save_ngram_model(out_dir + "/model.ngram", counts, data.vocab_hash);
    KneserNeyModel model = fit_kneser_ney(counts);
    for (const auto& w : model.warnings()) std::cerr << "warning: " << w << "\n";
    if (!export_counts.empty()) {
      std::ofstream tsv(export_counts, std::ios::binary);
      if (!tsv) throw std::runtime_error("cannot write " + export_counts);
      export_counts_tsv(counts, data.vocab, tsv);
    }
    std::cout << "fitted " << cfg.order << "-gram model -> " << out_dir
              << "/model.ngram\n";
    return 0;
  }
  if (kind != "denn") throw std::runtime_error("train: --kind must be denn or ngram");
  if (precision_from_env() == 64)
    train_denn_to_dir<double>(cfg, data, out_dir, seed);
  else
    train_denn_to_dir<float>(cfg, data, out_dir, seed);
  return 0;
}

// --- eval ---

// Owns a loaded model of either kind and exposes the query view.
struct LoadedModel {
  std::string path;
  std::unique_ptr<KneserNeyModel> kn;
  std::unique_ptr<DennParams<float>> denn32;
  std::unique_ptr<DennParams<double>> denn64;
  std::unique_ptr<Lm> view;
};

LoadedModel load_model(const std::string& path, uint64_t expect_hash, int precision) {
  require_file(path);
  LoadedModel m;
  m.path = path;
  uint64_t vhash = 0;
  if (peek_model_kind(path) == ModelKind::kNgram) {
    CountTable counts = load_ngram_counts(path, &vhash);
    m.kn = std::make_unique<KneserNeyModel>(fit_kneser_ney(counts));
    m.view = std::make_unique<KnLm>(*m.kn);
  } else if (precision == 64) {
    m.denn64 = std::make_unique<DennParams<double>>(load_denn_model<double>(path, &vhash));
    m.view = std::make_unique<FusedLm<double>>(*m.denn64);
  } else {
    m.denn32 = std::make_unique<DennParams<float>>(load_denn_model<float>(path, &vhash));
    m.view = std::make_unique<FusedLm<float>>(*m.denn32);
  }
  if (vhash != expect_hash)
    throw std::runtime_error("vocabulary hash mismatch for " + path +
                             " (model was trained against a different vocabulary)");
  return m;
}

int cmd_eval(const std::vector<std::string>& model_paths, const std::string& vocab_path,
             const std::string& test_path, const std::string& heldout_path,
             bool interpolate, bool correlate, int order_flag,
             const std::string& out_path) {
  require_file(vocab_path);
  require_file(test_path);
  Vocabulary vocab = load_vocabulary(vocab_path);
  uint64_t vhash = file_hash(vocab_path);
  auto test_ids = encode(read_lines(test_path), vocab);

  const int precision = precision_from_env();
  std::vector<LoadedModel> models;
  for (const auto& p : model_paths) models.push_back(load_model(p, vhash, precision));

  // The n-gram window width: take it from the models (they must agree).
  int order = order_flag;
  for (const auto& m : models) {
    int model_order = m.kn ? m.kn->order()
                           : (m.denn64 ? m.denn64->order() : m.denn32->order());
    if (order == 0) order = model_order;
    if (model_order != order)
      throw std::runtime_error("models disagree on n-gram order; pass --order");
  }

  std::ostringstream csv;
  csv.precision(17);
  csv << "record,name,value,tokens,mean_log2\n";
  for (const auto& m : models) {
    EvalReport r = perplexity(*m.view, test_ids, order, vocab.eos_id);
    csv << "ppl," << m.path << ',' << r.perplexity << ',' << r.token_count << ','
        << r.mean_log2 << '\n';
  }

  if (interpolate) {
    if (models.size() < 2)
      throw std::runtime_error("--interpolate needs at least two models");
    if (heldout_path.empty())
      throw std::runtime_error("--interpolate needs --heldout");
    require_file(heldout_path);
    auto heldout_ids = encode(read_lines(heldout_path), vocab);
    std::vector<const Lm*> views;
    for (const auto& m : models) views.push_back(m.view.get());
    InterpolatedLm mix = tune_interpolation(views, heldout_ids, order, vocab.eos_id);
    for (size_t i = 0; i < models.size(); ++i)
      csv << "interp_weight," << models[i].path << ','
          << mix.weights()(static_cast<Index>(i)) << ",,\n";
    csv << "interp_heldout_ll,combined," << mix.heldout_log2_likelihood() << ",,\n";
    EvalReport r = perplexity(mix, test_ids, order, vocab.eos_id);
    csv << "interp_ppl,combined," << r.perplexity << ',' << r.token_count << ','
        << r.mean_log2 << '\n';
  }

  if (correlate) {
    if (models.size() < 2)
      throw std::runtime_error("--correlate needs at least two models");
    std::vector<const Lm*> views;
    for (const auto& m : models) views.push_back(m.view.get());
    DiversityReport rep = posterior_correlation(views, test_ids, order, vocab.eos_id);
    for (Index i = 0; i < rep.correlation.rows(); ++i)
      for (Index j = i + 1; j < rep.correlation.cols(); ++j)
        csv << "posterior_corr," << i << ':' << j << ',' << rep.correlation(i, j)
            << ",,\n";
    csv << "posterior_corr_mean,all," << rep.mean_off_diagonal << ",,\n";
    for (const auto& e : rep.errors) csv << "posterior_corr_error," << e << ",,,\n";
  }

  if (out_path.empty())
    std::cout << csv.str();
  else
    write_text(out_path, csv.str());
  return 0;
}

// --- gridsearch ---

struct GridPoint {
  std::string run_id;
  double beta, gamma, lr, l2;
};

template <class S>
int run_gridsearch(const RunConfig& cfg, const std::string& out_dir, int jobs) {
  if (cfg.branches.size() < 2)
    throw std::runtime_error("gridsearch: scatter rows need at least two branches");
  PreparedData data = load_prepared(cfg.data_dir);
  fs::create_directories(out_dir);

  auto axis = [](const std::vector<double>& grid, double base) {
    return grid.empty() ? std::vector<double>{base} : grid;
  };
  std::vector<GridPoint> points;
  for (double beta : axis(cfg.grid_beta, cfg.loss.beta))
    for (double gamma : axis(cfg.grid_gamma, cfg.loss.gamma))
      for (double lr : axis(cfg.grid_learning_rate, cfg.optim.learning_rate))
        for (double l2 : axis(cfg.grid_l2, cfg.optim.l2)) {
          std::ostringstream id;
          id << "r" << std::setw(3) << std::setfill('0') << points.size() << "_beta"
             << beta << "_gamma" << gamma << "_lr" << lr << "_l2" << l2;
          points.push_back({id.str(), beta, gamma, lr, l2});
        }

  std::vector<std::unique_ptr<DennParams<S>>> trained(points.size());
  std::vector<std::string> failures(points.size());
  std::atomic<size_t> next{0};
  auto worker = [&] {
    for (;;) {
      size_t i = next.fetch_add(1);
      if (i >= points.size()) return;
      const GridPoint& pt = points[i];
      try {
        RunConfig run_cfg = cfg;
        run_cfg.loss.beta = pt.beta;
        run_cfg.loss.gamma = pt.gamma;
        run_cfg.optim.learning_rate = pt.lr;
        run_cfg.optim.l2 = pt.l2;
        uint64_t seed = derive_seed(cfg.seed, i);
        DennParams<S> model =
            init_denn<S>(run_cfg.order, run_cfg.branches, data.vocab.size(),
                         activation_from_string(run_cfg.activation), seed);
        auto [best, log] = train(std::move(model), data.train, data.valid,
                                 run_cfg.loss, run_cfg.optim, seed, data.vocab.eos_id);
        std::string run_dir = out_dir + "/" + pt.run_id;
        fs::create_directories(run_dir);
        save_denn_model(run_dir + "/model.denn", best, data.vocab_hash);
        write_text(run_dir + "/train_log.csv", log.to_csv());
        trained[i] = std::make_unique<DennParams<S>>(std::move(best));
      } catch (const std::exception& e) {
        failures[i] = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 0; t < std::max(jobs, 1); ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  std::vector<std::pair<std::string, const DennParams<S>*>> runs;
  for (size_t i = 0; i < points.size(); ++i)
    if (trained[i]) runs.push_back({points[i].run_id, trained[i].get()});
  ScatterTable table = scatter_data<S>(runs, data.test, data.vocab.eos_id);

  std::string csv = table.to_csv();
  for (size_t i = 0; i < points.size(); ++i)
    if (!failures[i].empty())
      csv += "# failed," + points[i].run_id + "," + failures[i] + "\n";
  write_text(out_dir + "/scatter.csv", csv);
  std::cout << csv;
  if (table.across_run_pearson)
    std::cout << "across-run pearson: " << *table.across_run_pearson << "\n";
  return 0;
}

int cmd_gridsearch(const RunConfig& cfg, const std::string& out_override, int jobs) {
  std::string out_dir = out_override.empty() ? cfg.out_dir : out_override;
  if (out_dir.empty()) throw std::runtime_error("gridsearch: no output directory");
  if (precision_from_env() == 64) return run_gridsearch<double>(cfg, out_dir, jobs);
  return run_gridsearch<float>(cfg, out_dir, jobs);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diverse-embedding neural language model toolkit"};
  app.require_subcommand(1);

  std::string config_path, out_dir, kind = "denn", export_counts;
  std::string vocab_path, test_path, heldout_path, report_path;
  std::vector<std::string> model_paths;
  bool interpolate = false, correlate = false;
  int jobs = 1, order_flag = 0;
  uint64_t seed_flag = 0;
  bool seed_given = false;

  auto* prepare = app.add_subcommand("prepare", "build vocabulary and encode the splits");
  prepare->add_option("--config", config_path)->required();
  prepare->add_option("--out", out_dir);

  auto* train_cmd = app.add_subcommand("train", "train a model from prepared data");
  train_cmd->add_option("--config", config_path)->required();
  auto* seed_opt = train_cmd->add_option("--seed", seed_flag);
  train_cmd->add_option("--out", out_dir);
  train_cmd->add_option("--kind", kind)->check(CLI::IsMember({"denn", "ngram"}));
  train_cmd->add_option("--export-counts", export_counts);

  auto* eval_cmd = app.add_subcommand("eval", "evaluate model files on a test set");
  eval_cmd->add_option("models", model_paths)->required();
  eval_cmd->add_option("--vocab", vocab_path)->required();
  eval_cmd->add_option("--test", test_path)->required();
  eval_cmd->add_option("--heldout", heldout_path);
  eval_cmd->add_flag("--interpolate", interpolate);
  eval_cmd->add_flag("--correlate", correlate);
  eval_cmd->add_option("--order", order_flag);
  eval_cmd->add_option("--out", report_path);

  auto* grid = app.add_subcommand("gridsearch", "train every grid point and emit scatter data");
  grid->add_option("--config", config_path)->required();
  grid->add_option("--out", out_dir);
  grid->add_option("--jobs", jobs);

  SynthSpec synth_spec;
  auto* synth = app.add_subcommand("synth", "generate a deterministic benchmark corpus");
  synth->add_option("--out", out_dir)->required();
  synth->add_option("--vocab-types", synth_spec.vocab_types);
  synth->add_option("--train-tokens", synth_spec.train_tokens);
  synth->add_option("--valid-tokens", synth_spec.valid_tokens);
  synth->add_option("--test-tokens", synth_spec.test_tokens);
  synth->add_option("--classes", synth_spec.classes);
  synth->add_option("--seed", synth_spec.seed);

  CLI11_PARSE(app, argc, argv);

  try {
    if (prepare->parsed()) return cmd_prepare(load_run_config(config_path), out_dir);
    if (train_cmd->parsed()) {
      RunConfig cfg = load_run_config(config_path);
      seed_given = seed_opt->count() > 0;
      uint64_t seed = seed_given ? seed_flag : cfg.seed;
      return cmd_train(cfg, kind, out_dir, seed, export_counts);
    }
    if (eval_cmd->parsed())
      return cmd_eval(model_paths, vocab_path, test_path, heldout_path, interpolate,
                      correlate, order_flag, report_path);
    if (grid->parsed()) return cmd_gridsearch(load_run_config(config_path), out_dir, jobs);
    if (synth->parsed()) {
      write_synth_corpus(synth_spec, out_dir);
      std::cout << "wrote corpus to " << out_dir << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
