#include "sfdet/bench/experiment.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "sfdet/adapt/adapt.hpp"
#include "sfdet/numerics/errors.hpp"

namespace sfdet::bench {

namespace fs = std::filesystem;

std::string csv_row(const ExperimentRow& row) {
  const MetricsReport& m = row.metrics;
  std::ostringstream out;
  out << row.method << ',' << row.seed;
  char buf[32];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof buf, ",%.4f", v);
    out << buf;
  };
  for (std::size_t c = 0; c < 3; ++c) put(c < m.ap.size() ? m.ap[c] : 0.0);
  put(m.known_map);
  put(m.u_recall);
  put(m.h_score);
  return out.str();
}

void write_csv(const fs::path& path, const std::vector<ExperimentRow>& rows) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write report " + path.string());
  out << kCsvHeader << '\n';
  for (const ExperimentRow& r : rows) out << csv_row(r) << '\n';
  if (!out) throw IoError("failed writing report " + path.string());
}

void write_config_echo(const ExperimentConfig& cfg, const fs::path& report) {
  fs::path echo = report;
  echo += ".config.json";
  std::ofstream out(echo, std::ios::binary);
  if (!out) throw IoError("cannot write config echo " + echo.string());
  out << to_json(cfg).dump(2) << '\n';
}

Dataset load_data(const ExperimentConfig& cfg) {
  if (!cfg.run.data_dir.empty()) return read_dataset(cfg.run.data_dir);
  return generate_dataset(cfg.data);
}

namespace {

// FNV-1a; stable across platforms, unlike std::hash.
std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// Only the fields the plain detector depends on; collab settings do not change source params.
nlohmann::json source_key(const ExperimentConfig& cfg) {
  nlohmann::json det = to_json(cfg.detector);
  for (const char* k : {"collab_layers", "top_k", "top_r", "joint_softmax", "gated_prefix", "prefix_gate_init"})
    det.erase(k);
  return {{"data", to_json(cfg.data)}, {"detector", det}, {"pretrain", to_json(cfg.pretrain)}};
}

}  // namespace

ModelParams source_params(const ExperimentConfig& cfg, const Dataset& data) {
  if (!cfg.run.source_ckpt.empty()) return adapt::load_params(cfg.run.source_ckpt);
  fs::path cached;
  if (!cfg.run.cache_dir.empty()) {
    char name[32];
    std::snprintf(name, sizeof name, "source-%016llx",
                  static_cast<unsigned long long>(fnv1a(source_key(cfg).dump())));
    cached = fs::path(cfg.run.cache_dir) / name;
    fs::path meta = cached;
    meta += ".json";
    if (fs::exists(meta)) return adapt::load_params(cached);
  }
  if (data.source_train.empty())
    throw UsageError("no source params: set run.source_ckpt or provide source_train scenes to pretrain on");
  // Rounded to float32 so fresh, cached and checkpointed sources agree exactly.
  ModelParams params = round_to_float(adapt::pretrain_source(data.source_train, cfg.detector, cfg.pretrain).params);
  if (!cached.empty()) {
    fs::create_directories(cached.parent_path());
    adapt::save_params(params, cached, source_key(cfg));
  }
  return params;
}

ExperimentRow run_experiment(const ExperimentConfig& cfg, const Dataset& data, const ModelParams& source,
                             std::uint64_t seed, const std::string& label) {
  if (data.target_train.empty() || data.target_eval.empty())
    throw UsageError("dataset needs target_train and target_eval scenes; run gen-data first");
  adapt::TrainConfig train = cfg.train;
  train.seed = seed;
  const adapt::AdaptResult res = adapt::adapt(source, data.target_train, cfg.detector, train, cfg.paul);
  const ModelParams& model = cfg.eval.use_teacher ? res.state.ts.teacher : res.state.ts.student;
  ExperimentRow row;
  row.method = label.empty() ? adapt::method_name(train.method) : label;
  row.seed = seed;
  row.metrics = evaluate(model, cfg.detector, data.target_eval, cfg.eval);
  return row;
}

std::vector<GridPoint> ablation_grid(const ExperimentConfig& base, const std::string& grid) {
  std::vector<GridPoint> points;
  const std::string method = adapt::method_name(base.train.method);
  auto add = [&](const std::string& setting, auto&& edit) {
    ExperimentConfig c = base;
    edit(c);
    c.detector.validate();
    points.push_back({method + "/" + setting, c});
  };
  if (grid == "method") {
    for (adapt::Method m : {adapt::Method::MtConf, adapt::Method::CollabOnly, adapt::Method::PaulOnly,
                            adapt::Method::Collapaul}) {
      ExperimentConfig c = base;
      c.train.method = m;
      points.push_back({adapt::method_name(m), c});
    }
  } else if (grid == "epsilon") {
    for (double e : {0.1, 0.3, 0.5, 0.7, 0.9}) {
      char s[32];
      std::snprintf(s, sizeof s, "epsilon=%.1f", e);
      add(s, [&](ExperimentConfig& c) { c.paul.epsilon = e; });
    }
  } else if (grid == "topk") {
    // 0 keeps every one of the 64 patch positions.
    for (std::size_t k : {std::size_t{10}, std::size_t{25}, std::size_t{50}, std::size_t{0}})
      add("top_k=" + (k == 0 ? std::string("all") : std::to_string(k)),
          [&](ExperimentConfig& c) { c.detector.top_k = k; });
  } else if (grid == "topr") {
    for (std::size_t r : {std::size_t{1}, std::size_t{3}, std::size_t{5}, std::size_t{10}})
      add("top_r=" + std::to_string(r), [&](ExperimentConfig& c) { c.detector.top_r = r; });
  } else if (grid == "L") {
    for (std::size_t l : {std::size_t{1}, std::size_t{2}, std::size_t{3}, std::size_t{4}})
      add("L=" + std::to_string(l), [&](ExperimentConfig& c) { c.detector.collab_layers = l; });
  } else {
    throw UsageError("unknown grid '" + grid + "' (expected method, epsilon, topk, topr or L)");
  }
  return points;
}

std::vector<ExperimentRow> run_ablation(const ExperimentConfig& base, const std::string& grid,
                                        const ProgressFn& progress) {
  const std::vector<GridPoint> points = ablation_grid(base, grid);
  const Dataset data = load_data(base);
  const ModelParams source = source_params(base, data);
  std::vector<ExperimentRow> rows;
  for (const GridPoint& p : points)
    for (std::uint64_t seed : base.run.seeds) {
      rows.push_back(run_experiment(p.config, data, source, seed, p.label));
      if (progress) progress(rows.back());
    }
  return rows;
}

}  // namespace sfdet::bench
