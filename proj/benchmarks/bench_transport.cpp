#include <benchmark/benchmark.h>

#include <random>

#include "ive/transport.hpp"

namespace {

ive::GridDistribution random_grid(ive::GridShape grid, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(1e-3, 1.0);
  std::vector<double> mass(grid.cells());
  for (double& m : mass) m = unit(rng);
  return ive::GridDistribution::normalized(grid, std::move(mass));
}

void BM_W1Exact(benchmark::State& state) {
  const ive::GridShape grid{static_cast<std::size_t>(state.range(0)),
                            static_cast<std::size_t>(state.range(0))};
  std::mt19937_64 rng(1);
  const auto p = random_grid(grid, rng);
  const auto q = random_grid(grid, rng);
  for (auto _ : state) benchmark::DoNotOptimize(ive::w1_exact(p, q));
}
BENCHMARK(BM_W1Exact)->Arg(8)->Arg(16)->Arg(24)->Unit(benchmark::kMillisecond);

void BM_W1Sinkhorn(benchmark::State& state) {
  const ive::GridShape grid{static_cast<std::size_t>(state.range(0)),
                            static_cast<std::size_t>(state.range(0))};
  std::mt19937_64 rng(2);
  const auto p = random_grid(grid, rng);
  const auto q = random_grid(grid, rng);
  ive::OtConfig cfg;
  cfg.method = ive::OtMethod::sinkhorn;
  for (auto _ : state) benchmark::DoNotOptimize(ive::w1_sinkhorn(p, q, cfg));
}
BENCHMARK(BM_W1Sinkhorn)->Arg(6)->Arg(8)->Unit(benchmark::kMillisecond);

}  // namespace
