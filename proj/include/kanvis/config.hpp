#pragma once

#include "kanvis/model.hpp"
#include "kanvis/train.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace kanvis {

using Json = nlohmann::ordered_json;

struct DataConfig {
  std::string task = "cifar";  ///< cifar | edge | regression
  std::string dir;
  std::string variant = "cifar10";
  bool standardize = false;
  double test_fraction = 1.0;  ///< balanced test subset, shared by every seed
  std::string edge_side = "left";
  std::string edge_rule = "single_step";
  std::string function = "sin";
  std::size_t n_train = 40;
  std::size_t n_test = 500;
  double noise_sd = 0.2;
  double x_min = -3.141592653589793;
  double x_max = 3.141592653589793;

  void validate() const;
  bool operator==(const DataConfig&) const = default;
};

struct OutputConfig {
  std::string dir = "runs/train";
  bool wall_clock = true;

  bool operator==(const OutputConfig&) const = default;
};

struct RunConfig {
  ModelSpec model;
  TrainConfig train;
  DataConfig data;
  OutputConfig output;

  bool operator==(const RunConfig&) const = default;
};

Json to_json(const ModelSpec& spec);
Json to_json(const TrainConfig& cfg);
Json to_json(const DataConfig& cfg);
Json to_json(const OutputConfig& cfg);
Json to_json(const RunConfig& cfg);

/// Strict parsing: every key must exist in the defaults and have a matching
/// type; errors are ConfigError carrying the dotted path.
ModelSpec model_spec_from_json(const Json& doc);
RunConfig run_config_from_json(const Json& doc);

/// Applies "dotted.path=value"; the value is parsed as JSON, falling back to
/// a plain string.
void apply_override(Json& doc, std::string_view assignment);

/// Reads a JSON file (IoError when unreadable) and applies the overrides.
RunConfig load_run_config(const std::filesystem::path& file, const std::vector<std::string>& overrides = {});

/// FNV-1a of the compact serialization, as 16 hex digits.
std::string fingerprint(const Json& doc);

}  // namespace kanvis
