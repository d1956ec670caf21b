#pragma once

#include "kanvis/config.hpp"
#include "kanvis/data.hpp"
#include "kanvis/train.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace kanvis {

inline constexpr const char* kVersion = "0.1.0";

struct PreparedData {
  Samples train;
  Samples test;
};

/// Loads or synthesizes the data a run config asks for. CIFAR splits are read
/// from data.dir; the test subset uses a fixed stream so every seed sees the
/// same test items, and label noise touches the training split only.
PreparedData prepare_data(const RunConfig& cfg);

/// The CIFAR part of prepare_data for callers that keep the full splits in
/// memory across runs.
PreparedData prepare_cifar(const LabeledDataset& train_full, const LabeledDataset& test_full, const RunConfig& cfg);

enum class Scale { desk, paper };
Scale parse_scale(const std::string& name);
std::string to_string(Scale scale);

struct ScaleSettings {
  double base_fraction;  ///< balanced training subset before any preset fraction
  double test_fraction;
  int epochs;
  int eval_every;
  std::size_t batch_size;
};
ScaleSettings scale_settings(Scale scale);

/// One configuration of a preset grid, run once per seed.
struct Cell {
  std::string name;
  std::string model;  ///< table row label
  std::string sweep_value;
  RunConfig config;
};

std::vector<std::string> preset_names();
/// Throws std::invalid_argument for unknown presets. `data` supplies the
/// dataset location for CIFAR presets.
std::vector<Cell> preset_grid(const std::string& preset, Scale scale, const DataConfig& data = {});
std::vector<std::uint64_t> default_seeds(const std::string& preset);

struct ExperimentOptions {
  std::string preset;
  Scale scale = Scale::desk;
  std::vector<std::uint64_t> seeds;  ///< empty selects the preset default
  std::filesystem::path data_dir;
  std::string variant = "cifar10";
  std::size_t workers = 0;  ///< 0 uses every logical core
  bool wall_clock = true;
  /// Restrict the grid to these sweep values; empty runs all of them.
  std::vector<std::string> sweep_values;
};

struct ResultRow {
  std::string preset;
  std::string cell;
  std::string model;
  std::string sweep_value;
  std::uint64_t seed = 0;
  int epoch = 0;
  std::string split;
  double loss = 0.0;
  double accuracy = 0.0;
  double wall_ms = 0.0;
};

struct SummaryEntry {
  double mean = 0.0;
  double sd = 0.0;
  std::size_t n_seeds = 0;
};

struct ExperimentResult {
  std::string preset;
  std::string metric;  ///< "test_accuracy", "train_accuracy" or "test_mse"
  std::vector<ResultRow> rows;
  /// sweep value -> model -> final-epoch metric over seeds, in grid order.
  std::vector<std::pair<std::string, std::vector<std::pair<std::string, SummaryEntry>>>> summary;
  Json metadata;

  const SummaryEntry& at(const std::string& sweep_value, const std::string& model) const;
};

/// Runs every (cell, seed) job on a bounded worker pool and merges results in
/// grid order, so the output does not depend on scheduling.
ExperimentResult run_experiment(const ExperimentOptions& options);

void write_csv(std::ostream& out, const ExperimentResult& result);
Json summary_json(const ExperimentResult& result);
/// results.csv, summary.json and metadata.json.
void write_outputs(const std::filesystem::path& dir, const ExperimentResult& result);

}  // namespace kanvis
