#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "sfdet/adapt/adapt.hpp"
#include "sfdet/bench/dataset.hpp"
#include "sfdet/bench/metrics.hpp"
#include "sfdet/detector/config.hpp"
#include "sfdet/paul/paul.hpp"

namespace sfdet::bench {

struct RunConfig {
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::string data_dir;       // read a rendered dataset instead of generating one
  std::string source_ckpt;    // reuse source params instead of pretraining
  std::string cache_dir;      // where generated source params are cached ("" = no cache)
};

/// Every configurable knob; JSON keys mirror the field names.
struct ExperimentConfig {
  DatasetConfig data;
  DetectorConfig detector;
  adapt::PretrainConfig pretrain;
  adapt::TrainConfig train;
  paul::PaulConfig paul;
  EvalConfig eval;
  RunConfig run;
};

nlohmann::json to_json(const GeneratorConfig& c);
nlohmann::json to_json(const DatasetConfig& c);
nlohmann::json to_json(const DetectorConfig& c);
nlohmann::json to_json(const adapt::PretrainConfig& c);
nlohmann::json to_json(const adapt::TrainConfig& c);
nlohmann::json to_json(const paul::PaulConfig& c);
nlohmann::json to_json(const EvalConfig& c);
nlohmann::json to_json(const ExperimentConfig& c);

// Parsers start from defaults, override present keys and reject unknown ones
// with ConfigError.
DatasetConfig dataset_config_from_json(const nlohmann::json& j);
DetectorConfig detector_config_from_json(const nlohmann::json& j);
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::string& path);

}  // namespace sfdet::bench
