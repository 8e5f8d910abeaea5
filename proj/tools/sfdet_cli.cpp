#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "sfdet/adapt/adapt.hpp"
#include "sfdet/bench/config.hpp"
#include "sfdet/bench/experiment.hpp"
#include "sfdet/numerics/errors.hpp"

using namespace sfdet;
using namespace sfdet::bench;
namespace fs = std::filesystem;

namespace {

// Checkpoint arguments may name the stem or its `.json` file.
fs::path checkpoint_stem(const std::string& arg) {
  fs::path p(arg);
  if (p.extension() == ".json") p.replace_extension();
  return p;
}

ExperimentConfig config_or_default(const std::string& path) {
  return path.empty() ? ExperimentConfig{} : load_experiment_config(path);
}

nlohmann::json checkpoint_metadata(const ExperimentConfig& cfg, const std::string& method, std::uint64_t seed) {
  return {{"method", method}, {"seed", seed}, {"config", to_json(cfg)}};
}

void print_report(const ExperimentRow& row) {
  const MetricsReport& m = row.metrics;
  std::printf("%-28s seed %-3llu mAP %6.2f  U-Recall %6.2f  H %6.2f\n", row.method.c_str(),
              static_cast<unsigned long long>(row.seed), m.known_map, m.u_recall, m.h_score);
  for (const std::string& w : m.warnings) std::printf("  warning: %s\n", w.c_str());
  std::fflush(stdout);
}

int gen_data(const std::string& config, const std::string& out) {
  const ExperimentConfig cfg = config_or_default(config);
  const nlohmann::json manifest = render_dataset(cfg.data, out);
  std::printf("wrote %zu records to %s\n", manifest.at("records").size(), out.c_str());
  return 0;
}

int pretrain(const std::string& config, const std::string& data_dir, const std::string& out) {
  const ExperimentConfig cfg = config_or_default(config);
  const Dataset data = read_dataset(data_dir);
  if (data.source_train.empty()) throw UsageError(data_dir + " has no source_train scenes; run gen-data first");
  const adapt::PretrainResult res = adapt::pretrain_source(data.source_train, cfg.detector, cfg.pretrain);
  adapt::save_params(res.params, checkpoint_stem(out), checkpoint_metadata(cfg, "source-only", cfg.pretrain.seed));
  std::printf("pretrained %zu steps, final batch loss %.4f\n", res.losses.size(),
              res.losses.empty() ? 0.0 : res.losses.back());
  return 0;
}

int adapt_cmd(const std::string& config, const std::string& init, const std::string& data_dir,
              const std::string& out) {
  const ExperimentConfig cfg = config_or_default(config);
  const Dataset data = read_dataset(data_dir);
  if (data.target_train.empty()) throw UsageError(data_dir + " has no target_train scenes; run gen-data first");
  const ModelParams source = adapt::load_params(checkpoint_stem(init));
  const adapt::AdaptResult res = adapt::adapt(source, data.target_train, cfg.detector, cfg.train, cfg.paul);
  adapt::save_checkpoint(res.state, checkpoint_stem(out),
                         checkpoint_metadata(cfg, adapt::method_name(cfg.train.method), cfg.train.seed));
  const adapt::StepReport last = res.history.empty() ? adapt::StepReport{} : res.history.back();
  std::printf("adapted %zu steps with %s, final loss %.4f\n", res.history.size(),
              adapt::method_name(cfg.train.method), last.loss);
  return 0;
}

int eval_cmd(const std::string& ckpt, const std::string& data_dir, const std::string& report,
             const std::string& config) {
  const fs::path stem = checkpoint_stem(ckpt);
  nlohmann::json meta;
  ModelParams params = adapt::load_params(stem, &meta);
  ExperimentConfig cfg;
  if (!config.empty()) cfg = load_experiment_config(config);
  else if (meta.contains("config")) cfg = experiment_config_from_json(meta.at("config"));
  if (cfg.eval.use_teacher) {
    fs::path teacher = stem;
    teacher += ".teacher";
    params = adapt::load_params(teacher);
  }
  const Dataset data = read_dataset(data_dir);
  ExperimentRow row;
  row.method = meta.value("method", std::string("unknown"));
  row.seed = meta.value("seed", std::uint64_t{0});
  row.metrics = evaluate(params, cfg.detector, data.target_eval, cfg.eval);
  print_report(row);
  write_csv(report, {row});
  return 0;
}

int ablate(const std::string& config, const std::string& grid, const std::string& report, const std::string& data_dir) {
  ExperimentConfig cfg = config_or_default(config);
  if (!data_dir.empty()) cfg.run.data_dir = data_dir;
  const std::vector<ExperimentRow> rows = run_ablation(cfg, grid, print_report);
  write_csv(report, rows);
  write_config_echo(cfg, report);
  std::printf("wrote %zu rows to %s\n", rows.size(), report.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Source-free open-set detection adaptation on a synthetic benchmark"};
  app.require_subcommand(1);
  std::string config, out, data, init, ckpt, report, grid;

  auto* gen = app.add_subcommand("gen-data", "Render the synthetic dataset");
  gen->add_option("--config", config, "Experiment config (JSON)");
  gen->add_option("--out", out, "Output directory")->required();

  auto* pre = app.add_subcommand("pretrain", "Supervised training on the source split");
  pre->add_option("--config", config, "Experiment config (JSON)");
  pre->add_option("--data", data, "Dataset directory")->required();
  pre->add_option("--out", out, "Output checkpoint stem")->required();

  auto* ada = app.add_subcommand("adapt", "Mean-teacher adaptation on the target split");
  ada->add_option("--config", config, "Experiment config (JSON)");
  ada->add_option("--init", init, "Source checkpoint")->required();
  ada->add_option("--data", data, "Dataset directory")->required();
  ada->add_option("--out", out, "Output checkpoint stem")->required();

  auto* ev = app.add_subcommand("eval", "Score a checkpoint on the target eval split");
  ev->add_option("--ckpt", ckpt, "Checkpoint")->required();
  ev->add_option("--data", data, "Dataset directory")->required();
  ev->add_option("--report", report, "Output CSV")->required();
  ev->add_option("--config", config, "Override the config stored in the checkpoint");

  auto* abl = app.add_subcommand("ablate", "Run an ablation grid over every configured seed");
  abl->add_option("--config", config, "Experiment config (JSON)");
  abl->add_option("--grid", grid, "Grid name")->required()->check(CLI::IsMember(grid_names()));
  abl->add_option("--report", report, "Output CSV")->required();
  abl->add_option("--data", data, "Dataset directory (overrides run.data_dir)");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*gen) return gen_data(config, out);
    if (*pre) return pretrain(config, data, out);
    if (*ada) return adapt_cmd(config, init, data, out);
    if (*ev) return eval_cmd(ckpt, data, report, config);
    if (*abl) return ablate(config, grid, report, data);
  } catch (const UsageError& e) {
    std::cerr << e.what() << '\n';
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << e.what() << '\n';
    return 1;
  }
  return 0;
}
