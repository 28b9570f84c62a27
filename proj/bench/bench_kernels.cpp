#include <benchmark/benchmark.h>

#include <memory>

#include "recall/continual.hpp"
#include "recall/kernels.hpp"
#include "recall/optimizer.hpp"

using namespace recall;
using kernels::Exec;

namespace {

Exec exec_of(const benchmark::State& state) { return state.range(0) ? Exec::kParallel : Exec::kSerial; }

struct Fixture {
  std::vector<TaskData> tasks;
  std::unique_ptr<ContinualLearner> learner;
  std::vector<LogicalForm> lfs;

  Fixture() {
    SynthSpec spec;
    spec.num_tasks = 2;
    tasks = tasks_from_synthetic(generate_synthetic(spec));
    RunSpec run;
    learner = std::make_unique<ContinualLearner>(tasks, run);
    for (const auto& ex : tasks[0].train) lfs.push_back(ex.lf);
  }
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

void BM_PairwiseSimilarity(benchmark::State& state) {
  const auto& lfs = fixture().lfs;
  for (auto _ : state) benchmark::DoNotOptimize(kernels::pairwise_similarity(lfs, {}, exec_of(state)));
  state.counters["pairs"] = static_cast<double>(lfs.size() * (lfs.size() - 1) / 2);
}

void BM_BatchGradient(benchmark::State& state) {
  const ContinualLearner& l = *fixture().learner;
  const auto& examples = l.train_examples(0);
  std::vector<double> grad(l.model().params().size());
  for (auto _ : state) {
    std::fill(grad.begin(), grad.end(), 0.0);
    benchmark::DoNotOptimize(
        kernels::batch_gradient(l.model(), examples, l.spaces(), grad, 1.0, true, exec_of(state)));
  }
  state.counters["examples"] = static_cast<double>(examples.size());
}

void BM_BatchDecode(benchmark::State& state) {
  const ContinualLearner& l = *fixture().learner;
  std::vector<std::vector<int>> words;
  std::vector<int> tasks;
  for (const auto& ex : l.train_examples(0)) {
    words.push_back(ex.words);
    tasks.push_back(0);
  }
  for (auto _ : state)
    benchmark::DoNotOptimize(kernels::batch_decode(l.model(), words, tasks, l.spaces(), 1, exec_of(state)));
}

void BM_Adam(benchmark::State& state) {
  const std::size_t n = 1 << 20;
  std::vector<double> params(n, 0.5), grad(n, 0.01);
  Adam adam(n);
  const ParamMask mask(n, true);
  for (auto _ : state) adam.step(params, grad, mask, exec_of(state));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n));
}

void BM_EwcGradient(benchmark::State& state) {
  const std::size_t n = 1 << 20;
  std::vector<double> grad(n, 0.0), theta(n, 1.0), anchor(n, 0.5), fisher(n, 0.1);
  for (auto _ : state) kernels::ewc_gradient(grad, theta, anchor, fisher, 10.0, exec_of(state));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n));
}

}  // namespace

// Arg 0 is the serial reference, arg 1 the OpenMP variant.
BENCHMARK(BM_PairwiseSimilarity)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BatchGradient)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BatchDecode)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Adam)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_EwcGradient)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
