#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "betamixer/dataset.hpp"
#include "betamixer/metrics.hpp"
#include "betamixer/model.hpp"
#include "betamixer/training.hpp"

namespace bmx {

struct PathsConfig {
  std::string data_dir = "data";
  std::string run_dir = "run";
};

/// Full experiment configuration. Section seeds are derived from `seed`.
struct RunConfig {
  std::uint64_t seed = 7;
  SyntheticConfig synthetic;
  GradeCodec codec;
  ModelConfig model;
  TrainConfig train;
  SeverityWeights weights;
  PathsConfig paths;
  std::vector<int> ablation_lengths = {1, 5, 10, 25};

  void validate() const;
  /// Copies `seed` into the section seeds.
  void propagate_seed();
};

nlohmann::json to_json(const SyntheticConfig& c);
nlohmann::json to_json(const GradeCodec& c);
nlohmann::json to_json(const ModelConfig& c);
nlohmann::json to_json(const TrainConfig& c);
nlohmann::json to_json(const RunConfig& c);

/// Each reader starts from the defaults and overwrites the keys present;
/// unknown keys and ill-typed values throw ConfigError.
SyntheticConfig synthetic_from_json(const nlohmann::json& j);
GradeCodec codec_from_json(const nlohmann::json& j);
ModelConfig model_from_json(const nlohmann::json& j);
TrainConfig train_from_json(const nlohmann::json& j);
RunConfig run_config_from_json(const nlohmann::json& j);

inline constexpr std::string_view kEnvPrefix = "BETAMIXER_";

/// Applies BETAMIXER_<SECTION>_<KEY>=value overrides (BETAMIXER_SEED for the
/// top-level seed). Values are parsed as JSON, falling back to a plain string.
void apply_env_overrides(nlohmann::json& config, char** environ_ptr);

/// FNV-1a 64 of the canonical (sorted-key, compact) JSON text.
std::string config_checksum(const RunConfig& config);

}  // namespace bmx
