#include <benchmark/benchmark.h>

#include <random>

#include "sfdet/adapt/adapt.hpp"
#include "sfdet/bench/dataset.hpp"
#include "sfdet/bench/metrics.hpp"
#include "sfdet/detector/params.hpp"
#include "sfdet/numerics/kernels.hpp"

using namespace sfdet;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  Matrix m(r, c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) m(i, j) = n(rng);
  return m;
}

template <Matrix (*Fn)(const Matrix&, const Matrix&)>
void BM_product(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(Fn(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<long>(n * n * n));
}

BENCHMARK(BM_product<kernels::matmul>)->Arg(64)->Arg(256)->Arg(512);
BENCHMARK(BM_product<kernels::matmul_reference>)->Arg(64)->Arg(256)->Arg(512);
BENCHMARK(BM_product<kernels::matmul_nt>)->Arg(64)->Arg(256);
BENCHMARK(BM_product<kernels::matmul_nt_reference>)->Arg(64)->Arg(256);
BENCHMARK(BM_product<kernels::matmul_tn>)->Arg(64)->Arg(256);
BENCHMARK(BM_product<kernels::matmul_tn_reference>)->Arg(64)->Arg(256);

const bench::Dataset& small_data() {
  static const bench::Dataset data = [] {
    bench::DatasetConfig c;
    c.source_train = 8;
    c.target_train = 0;
    c.target_eval = 32;
    return bench::generate_dataset(c);
  }();
  return data;
}

void BM_batch_loss_and_grad(benchmark::State& state) {
  const DetectorConfig cfg;
  std::mt19937_64 rng(3);
  const ModelParams params = init_detector_params(cfg, rng);
  std::vector<adapt::Example> batch;
  for (const bench::Scene& s : small_data().source_train)
    batch.push_back({&s.image, adapt::known_targets(s, cfg.num_known_classes)});
  for (auto _ : state)
    benchmark::DoNotOptimize(adapt::batch_loss_and_grad(params, cfg, batch, false, true).loss);
  state.SetItemsProcessed(state.iterations() * static_cast<long>(batch.size()));
}
BENCHMARK(BM_batch_loss_and_grad)->Unit(benchmark::kMillisecond);

void BM_evaluate(benchmark::State& state) {
  const DetectorConfig cfg;
  std::mt19937_64 rng(4);
  const ModelParams params = init_detector_params(cfg, rng);
  for (auto _ : state)
    benchmark::DoNotOptimize(bench::evaluate(params, cfg, small_data().target_eval).known_map);
  state.SetItemsProcessed(state.iterations() * static_cast<long>(small_data().target_eval.size()));
}
BENCHMARK(BM_evaluate)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
