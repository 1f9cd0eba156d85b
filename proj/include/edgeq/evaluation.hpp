#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "edgeq/env.hpp"
#include "edgeq/policy.hpp"

namespace edgeq {

/// SplitMix64-based derivation of independent seeds from (base, stream, index).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t index);

struct EpisodeTotals {
  std::int64_t slots = 0;
  std::int64_t acks = 0;
  std::int64_t drops = 0;
  std::int64_t queries = 0;
  std::int64_t dispatched = 0;
  double team_reward = 0.0;

  EpisodeTotals& operator+=(const EpisodeTotals& o);
  friend bool operator==(const EpisodeTotals&, const EpisodeTotals&) = default;
};

struct EvalSummary {
  std::vector<EpisodeTotals> episodes;
  EpisodeTotals totals;
  double query_cost = 0.0;

  /// Mean per-slot team reward over all slots of all episodes.
  double average_reward() const;
  double throughput() const;        // ACKs per slot, all dispatchers
  double queries_per_slot() const;
  double drops_per_slot() const;
};

/// Called once per slot with the pre-step world, the chosen action, and the outcome.
using SlotObserver =
    std::function<void(const WorldState& before, const JointAction&, const StepOutcome&)>;

EpisodeTotals run_episode(const JointPolicy& policy, const EnvConfig& config,
                          std::uint64_t env_seed, std::uint64_t policy_seed,
                          const SlotObserver& observer = {});

/// Episode e uses env seed derive_seed(seed, 0, e) and policy seed
/// derive_seed(seed, 1, e), so every policy sees the same server and arrival
/// sample paths for a given seed.
EvalSummary evaluate_policy(const JointPolicy& policy, const EnvConfig& config, int episodes,
                            std::uint64_t seed, bool parallel = true);

}  // namespace edgeq
