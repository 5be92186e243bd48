#include "dennlm/config.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

namespace dennlm {

namespace {

using nlohmann::json;

template <class T>
void get_if_present(const json& j, const char* key, T& out) {
  if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

}  // namespace

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error("config parse error in " + path + ": " + e.what());
  }

  RunConfig cfg;
  if (j.contains("data")) {
    const auto& d = j.at("data");
    get_if_present(d, "train", cfg.train_path);
    get_if_present(d, "valid", cfg.valid_path);
    get_if_present(d, "test", cfg.test_path);
    get_if_present(d, "dir", cfg.data_dir);
    if (d.contains("vocab_cap") && !d.at("vocab_cap").is_null())
      cfg.vocab_cap = d.at("vocab_cap").get<int32_t>();
  }
  if (j.contains("model")) {
    const auto& m = j.at("model");
    get_if_present(m, "order", cfg.order);
    get_if_present(m, "activation", cfg.activation);
    if (m.contains("branches")) {
      for (const auto& b : m.at("branches")) {
        if (!b.is_array() || b.size() != 2)
          throw std::runtime_error("config: each branch must be a [dim, hidden] pair");
        cfg.branches.emplace_back(b.at(0).get<int>(), b.at(1).get<int>());
      }
    }
    if (m.contains("alpha") && !m.at("alpha").is_null())
      cfg.alpha = m.at("alpha").get<std::vector<double>>();
  }
  if (j.contains("loss")) {
    const auto& l = j.at("loss");
    get_if_present(l, "beta", cfg.loss.beta);
    get_if_present(l, "gamma", cfg.loss.gamma);
    get_if_present(l, "sample_size", cfg.loss.sample_size);
    get_if_present(l, "raw_diversity", cfg.loss.raw_diversity);
  }
  if (j.contains("optim")) {
    const auto& o = j.at("optim");
    get_if_present(o, "learning_rate", cfg.optim.learning_rate);
    get_if_present(o, "rho", cfg.optim.rho);
    get_if_present(o, "epsilon", cfg.optim.epsilon);
    get_if_present(o, "clip_norm", cfg.optim.clip_norm);
    get_if_present(o, "bias_lr_scale", cfg.optim.bias_lr_scale);
    get_if_present(o, "l1", cfg.optim.l1);
    get_if_present(o, "l2", cfg.optim.l2);
    int64_t batch = cfg.optim.batch_size;
    get_if_present(o, "batch_size", batch);
    cfg.optim.batch_size = static_cast<Index>(batch);
    get_if_present(o, "max_epochs", cfg.optim.max_epochs);
    get_if_present(o, "patience", cfg.optim.patience);
  }
  get_if_present(j, "seed", cfg.seed);
  get_if_present(j, "out_dir", cfg.out_dir);
  if (j.contains("grid")) {
    const auto& g = j.at("grid");
    get_if_present(g, "beta", cfg.grid_beta);
    get_if_present(g, "gamma", cfg.grid_gamma);
    get_if_present(g, "learning_rate", cfg.grid_learning_rate);
    get_if_present(g, "l2", cfg.grid_l2);
  }

  // Fail fast on ranges; commands check path existence themselves.
  validate(cfg.loss);
  validate(cfg.optim);
  if (cfg.order < 2) throw std::runtime_error("config: order must be >= 2");
  if (cfg.vocab_cap && *cfg.vocab_cap < 2)
    throw std::runtime_error("config: vocab_cap must be >= 2");
  for (auto [dim, hidden] : cfg.branches)
    if (dim < 1 || hidden < 1)
      throw std::runtime_error("config: branch dims must be positive");
  if (cfg.alpha) {
    if (cfg.alpha->size() != cfg.branches.size())
      throw std::runtime_error("config: alpha length must match branch count");
    double sum = 0;
    for (double a : *cfg.alpha) {
      if (a <= 0) throw std::runtime_error("config: alpha entries must be positive");
      sum += a;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw std::runtime_error("config: alpha must sum to 1");
  }
  for (double b : cfg.grid_beta)
    if (b < 0 || b > 1) throw std::runtime_error("config: grid beta out of range");
  for (double g : cfg.grid_gamma)
    if (g < 0) throw std::runtime_error("config: grid gamma out of range");
  for (double lr : cfg.grid_learning_rate)
    if (lr <= 0) throw std::runtime_error("config: grid learning_rate out of range");
  for (double l2 : cfg.grid_l2)
    if (l2 < 0) throw std::runtime_error("config: grid l2 out of range");
  return cfg;
}

}  // namespace dennlm
