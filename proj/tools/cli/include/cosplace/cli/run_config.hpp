#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cosplace/embed.hpp"
#include "cosplace/partition.hpp"
#include "cosplace/synthcity.hpp"
#include "cosplace/train.hpp"

namespace cosplace::cli {

struct EvalConfig {
  double threshold_m = 25.0;
  std::vector<int> ks{1, 5, 10, 20};
};

/// Everything a run depends on. Serialized as one JSON document; the same
/// document is echoed into every artifact a command writes.
struct RunConfig {
  std::uint64_t seed = 0;
  bool deterministic = true;
  int threads = 1;
  PartitionConfig partition;
  TrainConfig train;
  double val_fraction = 0.05;
  EmbedConfig model;
  CityConfig city;
  EvalConfig eval;

  /// Pushes seed, threads and determinism into the module configs.
  void propagate();
  /// Validates every section. Throws kInvalidConfig.
  void validate() const;
};

nlohmann::json run_config_to_json(const RunConfig& cfg);

/// Missing keys keep their defaults; unknown keys throw kInvalidConfig with
/// the full key path.
RunConfig run_config_from_json(const nlohmann::json& doc);

RunConfig load_run_config(const std::string& path);

}  // namespace cosplace::cli
