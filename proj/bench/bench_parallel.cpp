// Serial reference vs OpenMP paths for the two hot loops: a training batch
// (rollouts + BPTT) and deterministic inference over a dataset.

#include <benchmark/benchmark.h>

#include "budgetdet/harness.hpp"

using namespace budgetdet;

namespace {

struct Fixture {
  Dataset data;
  PolicyConfig pcfg;
  TrainConfig tcfg;
  PolicyNet net;
  BaselineEstimate baseline;
  std::vector<const LabeledVideo*> batch;

  Fixture() {
    SyntheticSpec s;
    s.num_videos = 64;
    data = generate_dataset(s, 3);
    net = make_policy(pcfg, 1);
    tcfg.baseline = BaselineMode::none;
    baseline.per_step.assign(static_cast<std::size_t>(pcfg.steps), 0.0);
    for (std::size_t i = 0; i < 32; ++i) batch.push_back(&data[i]);
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

void BM_GradientBatch(benchmark::State& state) {
  const auto& f = fixture();
  const auto exec = state.range(0) ? Exec::parallel : Exec::serial;
  std::uint64_t seed = 0;
  for (auto _ : state) {
    auto g = policy_gradient_batch(f.net, f.pcfg, f.tcfg, f.batch, f.baseline, ++seed, exec);
    benchmark::DoNotOptimize(g.stats.grad_norm);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(f.batch.size()));
}
BENCHMARK(BM_GradientBatch)->Arg(0)->Arg(1)->ArgName("parallel")->Unit(benchmark::kMillisecond);

void BM_DetectAll(benchmark::State& state) {
  const auto& f = fixture();
  const auto exec = state.range(0) ? Exec::parallel : Exec::serial;
  for (auto _ : state) {
    auto d = detect_all(f.net, f.pcfg, f.data, exec);
    benchmark::DoNotOptimize(d.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(f.data.size()));
}
BENCHMARK(BM_DetectAll)->Arg(0)->Arg(1)->ArgName("parallel")->Unit(benchmark::kMillisecond);

void BM_DetectSteps(benchmark::State& state) {
  const auto& f = fixture();
  auto cfg = f.pcfg;
  cfg.steps = static_cast<int>(state.range(0));
  for (auto _ : state) {
    auto d = detect_all(f.net, cfg, f.data, Exec::serial);
    benchmark::DoNotOptimize(d.data());
  }
}
BENCHMARK(BM_DetectSteps)->Arg(3)->Arg(6)->Arg(12)->Arg(30)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
