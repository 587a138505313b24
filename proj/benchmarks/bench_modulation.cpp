#include <benchmark/benchmark.h>

#include "ive/modulation.hpp"
#include "ive/simulator.hpp"

namespace {

// Feeds a simulated 24x24 trajectory through the processor, one step per
// iteration, restarting when the trajectory runs out.
void BM_IveStep(benchmark::State& state) {
  ive::SimConfig sim;
  sim.grid = {24, 24};
  sim.steps = 100;
  sim.layers = static_cast<std::size_t>(state.range(0));
  const auto run = ive::run_decode(sim);
  auto processor = std::make_unique<ive::IveProcessor>(run.trace.layout, ive::IveConfig{});
  std::size_t t = 0;
  for (auto _ : state) {
    if (t == run.trace.steps.size()) {
      state.PauseTiming();
      processor = std::make_unique<ive::IveProcessor>(run.trace.layout, ive::IveConfig{});
      t = 0;
      state.ResumeTiming();
    }
    benchmark::DoNotOptimize(processor->process(run.trace.steps[t++]));
  }
}
BENCHMARK(BM_IveStep)->Arg(1)->Arg(4)->Unit(benchmark::kMicrosecond);

}  // namespace
