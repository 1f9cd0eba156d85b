#include "edgeq/evaluation.hpp"

#include "edgeq/parallel.hpp"

namespace edgeq {

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t index) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(base) ^ (stream * 0xd1b54a32d192ed03ULL)) ^ index);
}

EpisodeTotals& EpisodeTotals::operator+=(const EpisodeTotals& o) {
  slots += o.slots;
  acks += o.acks;
  drops += o.drops;
  queries += o.queries;
  dispatched += o.dispatched;
  team_reward += o.team_reward;
  return *this;
}

namespace {
double per_slot(double x, std::int64_t slots) {
  return slots > 0 ? x / static_cast<double>(slots) : 0.0;
}
}  // namespace

double EvalSummary::average_reward() const { return per_slot(totals.team_reward, totals.slots); }
double EvalSummary::throughput() const {
  return per_slot(static_cast<double>(totals.acks), totals.slots);
}
double EvalSummary::queries_per_slot() const {
  return per_slot(static_cast<double>(totals.queries), totals.slots);
}
double EvalSummary::drops_per_slot() const {
  return per_slot(static_cast<double>(totals.drops), totals.slots);
}

EpisodeTotals run_episode(const JointPolicy& policy, const EnvConfig& config,
                          std::uint64_t env_seed, std::uint64_t policy_seed,
                          const SlotObserver& observer) {
  Environment env(config);
  env.reset(env_seed);
  Rng rng(policy_seed);
  EpisodeTotals t;
  WorldState before;
  while (!env.done()) {
    const JointAction action = policy.act(env, rng);
    if (observer) before = env.world();
    const StepOutcome out = env.step(action);
    if (observer) observer(before, action, out);
    t.team_reward += out.team_reward;
    t.queries += out.total_queries;
    for (int c : out.completions) t.acks += c;
    for (int d : out.drops) t.drops += d;
    ++t.slots;
  }
  t.dispatched = env.world().jobs_dispatched;
  return t;
}

EvalSummary evaluate_policy(const JointPolicy& policy, const EnvConfig& config, int episodes,
                            std::uint64_t seed, bool parallel) {
  if (episodes < 1) throw ConfigError("evaluation needs at least one episode");
  auto one = [&](std::size_t e) {
    return run_episode(policy, config, derive_seed(seed, 0, e), derive_seed(seed, 1, e));
  };
  EvalSummary s;
  s.query_cost = config.query_cost;
  const auto n = static_cast<std::size_t>(episodes);
  s.episodes = parallel ? par::map_parallel<EpisodeTotals>(n, one)
                        : par::map_serial<EpisodeTotals>(n, one);
  for (const auto& e : s.episodes) s.totals += e;
  return s;
}

}  // namespace edgeq
