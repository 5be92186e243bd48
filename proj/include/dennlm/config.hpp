#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dennlm/denn.hpp"
#include "dennlm/optim.hpp"

namespace dennlm {

/// One training run described as JSON. Sections mirror the module configs:
/// data (text paths, vocabulary cap, prepared-artifact dir), model (order,
/// branch (D,H) list, activation, optional alpha), loss, optim, seed,
/// out_dir, and optional per-field grids for grid search.
struct RunConfig {
  // data
  std::string train_path, valid_path, test_path;
  std::optional<int32_t> vocab_cap;
  std::string data_dir;

  // model
  int order = 4;
  std::vector<std::pair<int, int>> branches;  // (embed dim, hidden size)
  std::optional<std::vector<double>> alpha;
  std::string activation = "tanh";

  LossWeights loss;
  OptimConfig optim;
  uint64_t seed = 1;
  std::string out_dir;

  // grid search axes (empty = pinned at the base value)
  std::vector<double> grid_beta, grid_gamma, grid_learning_rate, grid_l2;
};

/// Parses and range-validates a config file; invalid numeric ranges fail
/// here, before any work starts.
RunConfig load_run_config(const std::string& path);

}  // namespace dennlm
