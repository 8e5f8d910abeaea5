// Acceptance suite: one PASS/FAIL line per criterion. `--quick` skips the two
// long adaptation experiments (reported as SKIP).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "naive_model.hpp"
#include "naive_paul.hpp"
#include "sfdet/adapt/adapt.hpp"
#include "sfdet/bench/config.hpp"
#include "sfdet/bench/experiment.hpp"
#include "sfdet/bench/metrics.hpp"
#include "sfdet/collab/collab.hpp"
#include "sfdet/detector/hungarian.hpp"
#include "sfdet/detector/losses.hpp"
#include "sfdet/numerics/linalg.hpp"
#include "support.hpp"

using namespace sfdet;
using sfdet::testing::naive_matmul;
using sfdet::testing::random_matrix;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  std::string name;
  bool long_running = false;
  std::function<Outcome()> run;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Outcome h_score_arithmetic() {
  const double a = bench::h_score(32.32, 10.59), b = bench::h_score(16.91, 6.02);
  return {std::abs(a - 15.95) <= 0.01 && std::abs(b - 8.88) <= 0.01,
          fmt("h(32.32, 10.59) = %.4f, h(16.91, 6.02) = %.4f", a, b)};
}

Outcome known_map_arithmetic() {
  const std::vector<double> ap{52.10, 16.49, 28.37};
  const double m = bench::mean_ap(ap);
  return {std::abs(m - 32.32) <= 0.01, fmt("mean(52.10, 16.49, 28.37) = %.4f", m)};
}

double frob2(const Matrix& m) {
  double s = 0;
  for (double v : m.flat()) s += v * v;
  return s;
}

Outcome eckart_young() {
  std::mt19937_64 rng(101);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix m = random_matrix(rng, 50, 32);
    const SvdResult d = svd(m);
    const double total = frob2(m);
    for (std::size_t r = 1; r <= d.sigma.size(); ++r) {
      double tail = 0;
      for (std::size_t i = r; i < d.sigma.size(); ++i) tail += d.sigma[i] * d.sigma[i];
      const double residual = frob2(m - truncated_reconstruct(m, r));
      worst = std::max(worst, std::abs(residual - tail) / std::max(tail, 1e-12 * total));
    }
  }
  return {worst <= 1e-5, fmt("worst relative gap %.2e over 100 matrices x 32 ranks", worst)};
}

Outcome cda_duplication() {
  const DetectorConfig cfg;
  std::mt19937_64 rng(102);
  double worst = 0;
  for (int draw = 0; draw < 100; ++draw) {
    std::mt19937_64 prng(1000 + static_cast<std::uint64_t>(draw));
    ModelParams params = init_detector_params(cfg, prng);
    collab::add_collab_params(params, cfg, prng);
    ad::Tape tape;
    BoundParams bp(tape, params, false);
    const Matrix fs = random_matrix(rng, cfg.num_queries, cfg.model_dim, -2, 2);
    const Matrix dup = collab::cross_domain_attention(bp, "collab.0", tape.constant(fs), tape.constant(fs)).value();
    const Matrix q = naive_matmul(fs, params.at("collab.0.wq"));
    const Matrix k = naive_matmul(fs, params.at("collab.0.wk"));
    const Matrix single =
        naive_matmul(sfdet::testing::naive_attention_weights(q, k), naive_matmul(fs, params.at("collab.0.wv")));
    worst = std::max(worst, max_abs_diff(dup, single));
  }
  return {worst <= 1e-6, fmt("max |dup - single| = %.2e over 100 draws", worst)};
}

Outcome paul_oracle() {
  using namespace sfdet::testing::naive_paul;
  std::mt19937_64 rng(103);
  std::uniform_int_distribution<std::size_t> nq(1, 32), dim(2, 32);
  int matches = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto props = random_proposals(rng, nq(rng), dim(rng), 3);
    const paul::PaulConfig cfg;
    const paul::PseudoLabelSet got = paul::paul_pipeline(props, 3, cfg);
    const paul::PseudoLabelSet want = naive_pipeline(props, 3, cfg);
    matches += same_labels(got.known, want.known) && same_labels(got.unknown, want.unknown);
  }
  return {matches == 50, fmt("%d of 50 instances identical", matches)};
}

double brute_force_cost(const Matrix& cost) {
  std::vector<std::size_t> perm(cost.rows());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  double best = INFINITY;
  do {
    double s = 0;
    for (std::size_t j = 0; j < cost.cols(); ++j) s += cost(perm[j], j);
    best = std::min(best, s);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

Outcome hungarian_brute_force() {
  std::mt19937_64 rng(104);
  int equal = 0;
  for (int i = 0; i < 200; ++i) {
    const Matrix cost = random_matrix(rng, 6, 6, -2, 3);
    const double want = brute_force_cost(cost);
    equal += std::abs(hungarian_match(cost).total_cost - want) <= 1e-12 * std::max(1.0, std::abs(want));
  }
  return {equal == 200, fmt("%d of 200 optimal costs equal", equal)};
}

Outcome gradient_check() {
  DetectorConfig cfg;
  cfg.image_size = 16;
  cfg.patch = 4;
  cfg.channels = 8;
  cfg.model_dim = 8;
  cfg.num_queries = 4;
  cfg.num_decoder_layers = 3;
  cfg.collab_layers = 2;
  cfg.top_k = 10;
  cfg.top_r = 3;
  cfg.mlp_hidden = 8;
  cfg.prefix_gate_init = 1.0;
  std::mt19937_64 rng(105);
  ModelParams params = init_detector_params(cfg, rng);
  collab::add_collab_params(params, cfg, rng);
  Image img(3, cfg.image_size, cfg.image_size);
  std::uniform_real_distribution<double> u(0, 1);
  for (double& v : img.pixels) v = u(rng);
  const std::vector<Target> targets{{Box{0.3, 0.35, 0.25, 0.3}, 1}, {Box{0.7, 0.6, 0.3, 0.2}, 4}};
  std::vector<std::string> names;
  std::vector<Matrix> values;
  for (const auto& [name, m] : params) {
    names.push_back(name);
    values.push_back(m);
  }
  ad::ScalarFn f = [&](ad::Tape& tape, std::span<const ad::Var> vars) {
    std::map<std::string, ad::Var> bound;
    for (std::size_t i = 0; i < names.size(); ++i) bound.emplace(names[i], vars[i]);
    BoundParams bp(tape, std::move(bound));
    const DetectorOutput out = run_detector(bp, cfg, img, true);
    return detection_loss(out.heads.logits, out.heads.boxes, targets).total;
  };
  const ad::GradCheckReport r = ad::grad_check_report(f, values, 1e-5);
  return {r.max_relative_error <= 1e-4,
          fmt("max relative error %.2e over %zu tensors (worst %s)", r.max_relative_error, names.size(),
              names[r.worst_param].c_str())};
}

Outcome ema_exactness() {
  std::mt19937_64 rng(106);
  ModelParams t, s;
  t.insert("x", random_matrix(rng, 6, 6));
  s.insert("x", random_matrix(rng, 6, 6));
  const Matrix t0 = t.at("x");
  const double alpha = 0.99;
  // One update against the definition.
  ModelParams once = t;
  adapt::ema_update(once, s, alpha);
  double rel = 0;
  for (std::size_t i = 0; i < t0.size(); ++i) {
    const double want = alpha * t0.flat()[i] + (1 - alpha) * s.at("x").flat()[i];
    rel = std::max(rel, std::abs(once.at("x").flat()[i] - want) / std::max(std::abs(want), 1e-300));
  }
  double geo = 0;
  for (int n = 1; n <= 500; ++n) {
    adapt::ema_update(t, s, alpha);
    for (std::size_t i = 0; i < t0.size(); ++i) {
      const double want = s.at("x").flat()[i] + std::pow(alpha, n) * (t0.flat()[i] - s.at("x").flat()[i]);
      geo = std::max(geo, std::abs(t.at("x").flat()[i] - want));
    }
  }
  return {rel <= 1e-12 && geo <= 1e-10, fmt("single-step relative error %.1e, 500-step geometric error %.1e", rel, geo)};
}

Outcome overfit_sanity() {
  const DetectorConfig cfg;
  std::mt19937_64 rng(11);
  const std::vector<bench::Scene> scenes{bench::generate_scene(rng, bench::Domain::Source, bench::GeneratorConfig{})};
  adapt::PretrainConfig train;
  train.steps = 500;
  train.batch_size = 1;
  train.augment = adapt::AugmentMode::None;
  const adapt::PretrainResult r = adapt::pretrain_source(scenes, cfg, train);
  double tail = 0;
  for (std::size_t i = 490; i < 500; ++i) tail += r.losses[i] / 10.0;
  const double ratio = tail / r.losses.front();
  return {ratio < 0.1, fmt("loss %.4f -> %.4f (mean of last 10 steps), ratio %.3f", r.losses.front(), tail, ratio)};
}

struct CliRunner {
  fs::path cli;
  fs::path work;

  int run(const std::string& args, const std::string& log) const {
    const std::string cmd = "\"" + cli.string() + "\" " + args + " > \"" + (work / log).string() + "\" 2>&1";
    return std::system(cmd.c_str());
  }
};

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_json(const fs::path& p, const nlohmann::json& j) {
  std::ofstream out(p);
  out << j.dump(2) << '\n';
}

Outcome directional_ordering(const CliRunner& cli) {
  const fs::path config = cli.work / "method_grid.json";
  write_json(config, {{"train", {{"steps", 1000}}},
                      {"run", {{"seeds", {1, 2, 3}}, {"cache_dir", (cli.work / "cache").string()}}}});
  const fs::path report = cli.work / "method_grid.csv";
  if (cli.run("ablate --grid method --config \"" + config.string() + "\" --report \"" + report.string() + "\"",
              "method_grid.log") != 0)
    return {false, "ablate failed; see " + (cli.work / "method_grid.log").string()};
  struct Mean {
    double map = 0, u = 0, h = 0;
    int n = 0;
  };
  std::map<std::string, Mean> means;
  for (const auto& r : read_csv(report)) {
    if (r.size() != 8) return {false, "malformed report row"};
    Mean& m = means[r[0]];
    m.map += std::stod(r[5]);
    m.u += std::stod(r[6]);
    m.h += std::stod(r[7]);
    ++m.n;
  }
  for (auto& [name, m] : means) {
    if (m.n < 3) return {false, name + " has fewer than 3 seeds"};
    m.map /= m.n, m.u /= m.n, m.h /= m.n;
  }
  const Mean mt = means["mt-conf"], co = means["collab-only"], po = means["paul-only"], cp = means["collapaul"];
  const bool a = cp.h > mt.h, b = po.u > mt.u, c = co.map > mt.map;
  return {a && b && c,
          fmt("(a) collapaul H %.2f vs mt-conf %.2f %s; (b) paul-only U %.2f vs %.2f %s; (c) collab-only mAP %.2f vs "
              "%.2f %s",
              cp.h, mt.h, a ? "ok" : "FAIL", po.u, mt.u, b ? "ok" : "FAIL", co.map, mt.map, c ? "ok" : "FAIL")};
}

Outcome determinism(const CliRunner& cli) {
  // A reduced config keeps the repeat cheap; the method grid and seed handling are unchanged.
  const fs::path config = cli.work / "determinism.json";
  write_json(config, {{"data", {{"source_train", 200}, {"target_train", 100}, {"target_eval", 60}}},
                      {"pretrain", {{"steps", 150}}},
                      {"train", {{"steps", 40}}},
                      {"run", {{"seeds", {5}}}}});
  std::string first;
  for (int rep = 0; rep < 2; ++rep) {
    const fs::path report = cli.work / ("determinism_" + std::to_string(rep) + ".csv");
    if (cli.run("ablate --grid method --config \"" + config.string() + "\" --report \"" + report.string() + "\"",
                "determinism.log") != 0)
      return {false, "ablate failed; see " + (cli.work / "determinism.log").string()};
    if (rep == 0) first = slurp(report);
    else if (slurp(report) != first) return {false, "reports differ"};
  }
  const auto rows = std::count(first.begin(), first.end(), '\n') - 1;
  return {rows == 4, fmt("two runs of ablate --grid method byte-identical (%ld rows)", static_cast<long>(rows))};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance suite"};
  bool quick = false;
  std::string cli_path = SFDET_CLI_PATH;
  std::string work = (fs::temp_directory_path() / "sfdet_acceptance").string();
  app.add_flag("--quick", quick, "Skip the adaptation experiments");
  app.add_option("--cli", cli_path, "Path to the sfdet executable");
  app.add_option("--work", work, "Scratch directory (source params are cached here)");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(work);
  const CliRunner cli{cli_path, work};

  const std::vector<Criterion> criteria{
      {"H-Score arithmetic", false, h_score_arithmetic},
      {"Known-mAP arithmetic", false, known_map_arithmetic},
      {"Eckart-Young residual", false, eckart_young},
      {"Cross-domain attention duplication identity", false, cda_duplication},
      {"Unknown labeling oracle equivalence", false, paul_oracle},
      {"Hungarian vs brute force", false, hungarian_brute_force},
      {"Gradient check, collab path included", false, gradient_check},
      {"EMA exactness and geometric decay", false, ema_exactness},
      {"Overfit sanity", false, overfit_sanity},
      {"Directional method ordering over 3 seeds", true, [&] { return directional_ordering(cli); }},
      {"Determinism of ablate --grid method", true, [&] { return determinism(cli); }},
  };
  int failed = 0;
  for (const Criterion& c : criteria) {
    if (quick && c.long_running) {
      std::printf("[SKIP] %s\n", c.name.c_str());
      continue;
    }
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !o.pass;
    std::printf("[%s] %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", c.name.c_str(), o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
