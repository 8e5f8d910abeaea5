#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "json.hpp"

#include "sfdet/bench/scene.hpp"

namespace sfdet::bench {

struct DatasetConfig {
  std::uint64_t seed = 7;
  std::size_t source_train = 2000;
  std::size_t target_train = 1000;
  std::size_t target_eval = 300;
  GeneratorConfig generator;
};

struct Dataset {
  std::vector<Scene> source_train;
  std::vector<Scene> target_train;  // annotations kept for evaluation only
  std::vector<Scene> target_eval;
  DatasetConfig config;

  std::size_t size() const { return source_train.size() + target_train.size() + target_eval.size(); }
};

/// Generates every split in parallel; record i of a split depends only on (seed, split, i).
Dataset generate_dataset(const DatasetConfig& cfg);

/// Writes `manifest.json` and `images.bin` under `out_dir` and returns the manifest.
nlohmann::json render_dataset(const DatasetConfig& cfg, const std::filesystem::path& out_dir);
nlohmann::json write_dataset(const Dataset& data, const std::filesystem::path& out_dir);
Dataset read_dataset(const std::filesystem::path& dir);

}  // namespace sfdet::bench
