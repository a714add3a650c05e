// Parallel kernels against their serial references on realistic workloads.
// Run: ./bench_kernels [--benchmark_filter=...]

#include <benchmark/benchmark.h>

#include <vector>

#include "pnr/filter_ip.hpp"
#include "pnr/hdbscan.hpp"
#include "pnr/knn.hpp"
#include "pnr/rng.hpp"
#include "pnr/simulator.hpp"

namespace {

std::vector<int32_t> poisson_labels(double mu, int64_t n, uint64_t seed) {
  pnr::SplitMix64 rng(seed);
  std::vector<int32_t> labels(n);
  for (auto& v : labels) v = static_cast<int32_t>(rng.poisson(mu));
  return labels;
}

pnr::LabeledBatch make_batch(int64_t n_traces, double rep_rate, uint64_t seed) {
  const auto labels = poisson_labels(2.0, n_traces, seed);
  return pnr::synthesize_batch(labels, pnr::default_pulse_shape(),
                               pnr::default_acquisition(rep_rate), 4, seed);
}

void bm_synthesize_serial(benchmark::State& state) {
  const auto labels = poisson_labels(2.0, state.range(0), 7);
  const auto shape = pnr::default_pulse_shape();
  const auto meta = pnr::default_acquisition(800e3);
  for (auto _ : state)
    benchmark::DoNotOptimize(pnr::synthesize_batch_serial(labels, shape, meta, 4, 7));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void bm_synthesize_parallel(benchmark::State& state) {
  const auto labels = poisson_labels(2.0, state.range(0), 7);
  const auto shape = pnr::default_pulse_shape();
  const auto meta = pnr::default_acquisition(800e3);
  for (auto _ : state)
    benchmark::DoNotOptimize(pnr::synthesize_batch(labels, shape, meta, 4, 7));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void bm_inner_products_serial(benchmark::State& state) {
  const auto batch = make_batch(state.range(0), 100e3, 11);
  const auto ref = pnr::reference_trace(batch.batch);
  for (auto _ : state)
    benchmark::DoNotOptimize(pnr::inner_products_serial(batch.batch, ref));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void bm_inner_products_parallel(benchmark::State& state) {
  const auto batch = make_batch(state.range(0), 100e3, 11);
  const auto ref = pnr::reference_trace(batch.batch);
  for (auto _ : state)
    benchmark::DoNotOptimize(pnr::inner_products(batch.batch, ref));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void bm_core_distances_serial(benchmark::State& state) {
  pnr::SplitMix64 rng(3);
  Eigen::MatrixXd points(state.range(0), 2);
  for (Eigen::Index i = 0; i < points.size(); ++i) points.data()[i] = rng.normal();
  for (auto _ : state)
    benchmark::DoNotOptimize(pnr::core_distances_serial(points, 10));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void bm_core_distances_parallel(benchmark::State& state) {
  pnr::SplitMix64 rng(3);
  Eigen::MatrixXd points(state.range(0), 2);
  for (Eigen::Index i = 0; i < points.size(); ++i) points.data()[i] = rng.normal();
  for (auto _ : state)
    benchmark::DoNotOptimize(pnr::core_distances(points, 10));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

pnr::KnnModel make_knn_model(int64_t n_train) {
  const auto calib = make_batch(n_train + 16, 100e3, 13);
  const auto training = pnr::build_training_set(calib, 800e3, 4, 13);
  return pnr::fit_knn(training, 5, pnr::FeatureMode::kFullTrace);
}

void bm_knn_predict_serial(benchmark::State& state) {
  const auto model = make_knn_model(state.range(0));
  const auto queries = make_batch(1024, 800e3, 17);
  for (auto _ : state)
    benchmark::DoNotOptimize(pnr::knn_predict_serial(model, queries.batch));
  state.SetItemsProcessed(state.iterations() * 1024);
}

void bm_knn_predict_parallel(benchmark::State& state) {
  const auto model = make_knn_model(state.range(0));
  const auto queries = make_batch(1024, 800e3, 17);
  for (auto _ : state)
    benchmark::DoNotOptimize(pnr::knn_predict(model, queries.batch));
  state.SetItemsProcessed(state.iterations() * 1024);
}

}  // namespace

BENCHMARK(bm_synthesize_serial)->Arg(1 << 12)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_synthesize_parallel)->Arg(1 << 12)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_inner_products_serial)->Arg(1 << 14)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_inner_products_parallel)->Arg(1 << 14)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_core_distances_serial)->Arg(1 << 12)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_core_distances_parallel)->Arg(1 << 12)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_knn_predict_serial)->Arg(1 << 14)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_knn_predict_parallel)->Arg(1 << 14)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
