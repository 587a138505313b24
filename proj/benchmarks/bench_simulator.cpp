#include <benchmark/benchmark.h>

#include "ive/simulator.hpp"

namespace {

void BM_RunDecode(benchmark::State& state) {
  ive::SimConfig cfg;
  cfg.grid = {24, 24};
  cfg.steps = 100;
  cfg.ive_enabled = state.range(0) != 0;
  for (auto _ : state) benchmark::DoNotOptimize(ive::run_decode(cfg));
}
BENCHMARK(BM_RunDecode)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace
