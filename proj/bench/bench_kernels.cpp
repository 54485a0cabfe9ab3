// Serial reference vs OpenMP kernels. Arg 0 selects serial, 1 parallel.

#include <benchmark/benchmark.h>

#include <random>

#include "cpcert/fourier.hpp"
#include "cpcert/harness.hpp"
#include "cpcert/network.hpp"
#include "cpcert/properties.hpp"

using namespace cpcert;

namespace {

Execution mode(const benchmark::State& state) { return state.range(0) ? Execution::parallel : Execution::serial; }

DenseTensor gaussian(const Shape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  DenseTensor t(shape);
  for (double& v : t.storage()) v = n(rng);
  return t;
}

void BM_Conv2dCircular(benchmark::State& state) {
  const DenseTensor x = gaussian({32, 32, 16}, 1), m = gaussian({3, 3, 32, 16}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d_circular(x, m, mode(state)));
}

void BM_ApplyLinearCp(benchmark::State& state) {
  PresetOptions po;
  po.seed = 3;
  const NetworkModel net = make_cnn({32, 32, 8}, {8, 32, 4}, 3, po);
  const DenseTensor x = gaussian({32, 32, 8}, 4);
  for (auto _ : state) benchmark::DoNotOptimize(apply_linear(net.layers[0], x, mode(state)));
}

void BM_BatchGradient(benchmark::State& state) {
  const NetworkModel net = make_toy_cnn();
  const Dataset d = make_synthetic(4, 16, {8, 8, 1}, 5);
  std::vector<std::size_t> idx(d.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  for (auto _ : state) benchmark::DoNotOptimize(batch_gradient(net, d, idx, mode(state)));
}

void BM_ComputeProperties(benchmark::State& state) {
  const NetworkModel net = make_toy_cnn();
  const Dataset d = make_synthetic(4, 32, {8, 8, 1}, 6);
  for (auto _ : state) benchmark::DoNotOptimize(compute_properties(net, d, mode(state)));
}

}  // namespace

BENCHMARK(BM_Conv2dCircular)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ApplyLinearCp)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BatchGradient)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ComputeProperties)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
