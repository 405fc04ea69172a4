// Copyright (c) modasr authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "modasr/training.hpp"

namespace modasr::cli {

inline constexpr int kConfigVersion = 1;

// Exactly one of `manifest` (path) or `spec` (synthesized in memory).
struct CorpusRef {
  std::string manifest;
  std::optional<CorpusSpec> spec;
};

struct RoutingSpec {
  std::string mode = "none";  // none, fixed, learned
  std::size_t experts = 2;
  std::vector<std::size_t> modular_layers{1};  // 1-based, as on the command line
  ExpertInit init = ExpertInit::Independent;
  std::size_t router_channels = 32;
  std::size_t router_kernel = 5;
  std::size_t router_pool = 2;
  std::string router_checkpoint;  // learned mode; pretrained in-process when empty

  bool modular() const { return mode != "none"; }
  std::set<std::size_t> zero_based_layers() const;
};

struct GridCell {
  std::string routing;
  std::size_t experts = 2;
  std::vector<std::size_t> modular_layers;
};

// Explicit cells followed by the cross product of the listed values. A
// dimension left empty in a non-empty cross product takes the base value.
struct GridSpec {
  std::vector<GridCell> cells;
  std::vector<std::string> routing;
  std::vector<std::size_t> experts;
  std::vector<std::vector<std::size_t>> modular_layers;
};

struct ExperimentConfig {
  std::string name = "run";
  std::uint64_t seed = 1;
  std::string output_dir = "runs/run";
  CorpusRef corpus;
  FeatureConfig features;
  EncoderConfig encoder;
  RoutingSpec routing;
  TrainSchedule train;
  TrainSchedule router_train;
  std::size_t average_k = 10;
  GridSpec grid;

  // Throws ConfigError naming the offending field. Grid cells are checked as they run.
  void validate() const;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& c);
ExperimentConfig load_config(const std::filesystem::path& path);

// Seeds: run = derive(seed, name); model init, training order and router
// init each derive from the run seed by tag; the synthetic corpus derives
// from the top-level seed alone so every run of a grid sees the same data.
std::uint64_t run_seed(const ExperimentConfig& c);
std::uint64_t corpus_seed(const ExperimentConfig& c);

// Output directory with MODASR_OUTPUT_ROOT applied to relative paths.
std::filesystem::path resolve_output(const std::string& dir);

std::vector<GridCell> expand_grid(const ExperimentConfig& c);
std::string cell_name(const GridCell& cell);
ExperimentConfig apply_cell(const ExperimentConfig& base, const GridCell& cell);

Dataset load_corpus(const ExperimentConfig& c);
std::vector<const Example*> heldout(const Dataset& d);

AsrModel build_model(const ExperimentConfig& c, const std::optional<RouterClassifierParams<float>>& router);
RouterConfig router_config(const ExperimentConfig& c);
std::string router_fingerprint(const RouterConfig& rc);
Checkpoint router_checkpoint(const RouterClassifierParams<float>& r);
RouterClassifierParams<float> router_from_checkpoint(const Checkpoint& ck, const RouterConfig& rc);

void write_json(const std::filesystem::path& path, const nlohmann::json& j);
void write_text(const std::filesystem::path& path, const std::string& text);
nlohmann::json read_json(const std::filesystem::path& path);

}  // namespace modasr::cli
