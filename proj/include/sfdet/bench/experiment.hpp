#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "sfdet/bench/config.hpp"
#include "sfdet/bench/dataset.hpp"
#include "sfdet/bench/metrics.hpp"
#include "sfdet/detector/params.hpp"

namespace sfdet::bench {

struct ExperimentRow {
  std::string method;  // method name, with the swept setting appended for non-method grids
  std::uint64_t seed = 0;
  MetricsReport metrics;
};

inline constexpr const char* kCsvHeader = "method,seed,ap_class1,ap_class2,ap_class3,known_map,u_recall,h_score";

/// One CSV line (no newline); values printed with 4 decimals.
std::string csv_row(const ExperimentRow& row);
void write_csv(const std::filesystem::path& path, const std::vector<ExperimentRow>& rows);

/// The rendered dataset at run.data_dir, or a freshly generated one.
Dataset load_data(const ExperimentConfig& cfg);

/// Source params from run.source_ckpt, else from the cache under run.cache_dir
/// (keyed by the data, detector and pretrain configs), else by pretraining.
ModelParams source_params(const ExperimentConfig& cfg, const Dataset& data);

/// Adapts `source` with train.seed = `seed` and evaluates on the target eval split.
ExperimentRow run_experiment(const ExperimentConfig& cfg, const Dataset& data, const ModelParams& source,
                             std::uint64_t seed, const std::string& label = {});

struct GridPoint {
  std::string label;
  ExperimentConfig config;
};

inline const std::vector<std::string>& grid_names() {
  static const std::vector<std::string> names{"method", "epsilon", "topk", "topr", "L"};
  return names;
}

/// Variants of `base` for one ablation grid; throws UsageError for unknown names.
std::vector<GridPoint> ablation_grid(const ExperimentConfig& base, const std::string& grid);

using ProgressFn = std::function<void(const ExperimentRow&)>;

/// Every grid point for every seed in run.seeds, rows ordered by point then seed.
std::vector<ExperimentRow> run_ablation(const ExperimentConfig& base, const std::string& grid,
                                        const ProgressFn& progress = {});

/// Writes the config echo next to a report: `<report>.config.json`.
void write_config_echo(const ExperimentConfig& cfg, const std::filesystem::path& report);

}  // namespace sfdet::bench
