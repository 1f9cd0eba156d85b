// Serial reference vs OpenMP kernel for each parallel hot path.
// Arg(0) = serial, Arg(1) = parallel.

#include <benchmark/benchmark.h>

#include <numeric>

#include "edgeq/baselines.hpp"
#include "edgeq/evaluation.hpp"
#include "edgeq/experiment.hpp"
#include "edgeq/mappo.hpp"
#include "edgeq/nn.hpp"
#include "edgeq/parallel.hpp"

using namespace edgeq;

static void BM_GradientSum(benchmark::State& state) {
  const bool parallel = state.range(0) != 0;
  Rng rng(1);
  nn::DenseNet net({40, 64, 64, 10}, nn::Activation::Tanh, rng, 1.0);
  std::vector<std::vector<double>> xs(1024, std::vector<double>(40));
  for (auto& x : xs)
    for (auto& v : x) v = std::uniform_real_distribution<double>(-1, 1)(rng);
  const auto fn = [&](std::size_t i, std::span<double> g) {
    nn::Tape tape;
    const auto y = net.forward(xs[i], tape);
    std::vector<double> up(y.begin(), y.end());
    net.backward(tape, up, g);
    return 0.5 * std::inner_product(up.begin(), up.end(), up.begin(), 0.0);
  };
  std::vector<double> g(net.parameter_count());
  for (auto _ : state) {
    std::fill(g.begin(), g.end(), 0.0);
    const double l = parallel ? par::sum_gradients_parallel<double>(xs.size(), g, fn)
                              : par::sum_gradients_serial<double>(xs.size(), g, fn);
    benchmark::DoNotOptimize(l);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(xs.size()));
}
BENCHMARK(BM_GradientSum)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

static void BM_Rollout(benchmark::State& state) {
  const bool parallel = state.range(0) != 0;
  const auto env = default_paper_config();
  mappo::TrainConfig t;
  const auto agents = mappo::Agents::create(env, t, 3);
  std::vector<mappo::RolloutWorker> workers;
  for (int w = 0; w < 4; ++w) {
    workers.push_back({Environment(env), Rng(10 + w), derive_seed(5, w, 0), 0});
    workers.back().env.reset(derive_seed(workers.back().seed_base, 0, 0));
  }
  for (auto _ : state) {
    auto buf = mappo::collect_rollout(workers, agents, 256, parallel);
    benchmark::DoNotOptimize(buf.rewards.data());
  }
  state.SetItemsProcessed(state.iterations() * 4 * 256);
}
BENCHMARK(BM_Rollout)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

static void BM_Update(benchmark::State& state) {
  const bool parallel = state.range(0) != 0;
  const auto env = default_paper_config();
  mappo::TrainConfig t;
  const auto agents0 = mappo::Agents::create(env, t, 3);
  mappo::RolloutWorker w{Environment(env), Rng(4), 4, 0};
  w.env.reset(derive_seed(4, 0, 0));
  auto buf0 = mappo::collect_rollout(w, agents0, 256);
  mappo::compute_advantages(buf0, env.discount, t.gae_lambda);
  for (auto _ : state) {
    state.PauseTiming();
    auto agents = agents0;
    auto buf = buf0;
    Rng rng(9);
    state.ResumeTiming();
    const auto s = mappo::mappo_update(buf, agents, rng, parallel);
    benchmark::DoNotOptimize(s.total_loss);
  }
}
BENCHMARK(BM_Update)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

static void BM_Evaluate(benchmark::State& state) {
  const bool parallel = state.range(0) != 0;
  const auto env = default_paper_config();
  const BaselinePolicy p(BaselineKind::random(0.5));
  for (auto _ : state) {
    const auto s = evaluate_policy(p, env, 8, 1, parallel);
    benchmark::DoNotOptimize(s.totals.acks);
  }
}
BENCHMARK(BM_Evaluate)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

static void BM_SweepCells(benchmark::State& state) {
  const bool parallel = state.range(0) != 0;
  SweepSpec s;
  s.parameter = SweptParameter::QueryCost;
  s.values = {0.0, 0.01, 0.1};
  s.policies = {PolicySpec::parse("never"), PolicySpec::parse("random:0.5"),
                PolicySpec::parse("always")};
  s.seeds = {1, 2};
  s.base = default_paper_config();
  s.eval_episodes = 1;
  for (auto _ : state) {
    const auto rows = run_sweep(s, {}, parallel);
    benchmark::DoNotOptimize(rows.data());
  }
}
BENCHMARK(BM_SweepCells)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
