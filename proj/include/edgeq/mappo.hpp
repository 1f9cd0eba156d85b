#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "edgeq/env.hpp"
#include "edgeq/evaluation.hpp"
#include "edgeq/nn.hpp"
#include "edgeq/policy.hpp"

namespace edgeq::mappo {

enum class ExecutionMode { Greedy, Sampled };

const char* to_string(ExecutionMode m);
ExecutionMode execution_mode_from_string(const std::string& s);

struct TrainConfig {
  double clip_epsilon = 0.2;
  double value_coef = 0.5;
  double entropy_coef = 0.01;
  double gae_lambda = 0.95;
  int rollout_length = 256;  // slots per worker per update
  int epochs_per_update = 4;
  int minibatch_count = 4;
  int total_updates = 500;
  double learning_rate = 3e-4;
  double max_grad_norm = 0.5;
  bool parameter_sharing = true;
  bool normalize_advantages = true;
  bool value_normalization = true;
  // Dispatch head sees this slot's query answers (second forward pass).
  bool two_phase = false;
  int hidden_units = 64;
  int hidden_layers = 2;
  int workers = 1;  // parallel environment instances per rollout
  int eval_interval = 50;
  int eval_episodes = 4;
  ExecutionMode eval_mode = ExecutionMode::Sampled;
  std::uint64_t seed = 1;

  void validate() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// --------------------------------------------------------------- encodings

/// Per server: seen availability (0/1), seen queue / capacity, min(aoi, cap) / cap.
std::vector<double> encode_observation(const KnowledgeSnapshot& snapshot, const EnvConfig& config);
/// True availability, true queue / capacity, then the normalized N x K AoI matrix.
std::vector<double> encode_state(const WorldState& world, const EnvConfig& config);
int observation_width(const EnvConfig& config);
int state_width(const EnvConfig& config);

/// Running mean/variance of value targets (parallel-merge update).
struct RunningMeanStd {
  double mean = 0.0;
  double var = 1.0;
  double count = 1e-4;

  void update(std::span<const double> xs);
  double stddev() const;
  double normalize(double x) const { return (x - mean) / stddev(); }
  double denormalize(double y) const { return y * stddev() + mean; }

  friend bool operator==(const RunningMeanStd&, const RunningMeanStd&) = default;
};

/// Decentralized actors plus one centralized critic, with their optimizers.
struct Agents {
  EnvConfig env;
  TrainConfig train;
  std::vector<nn::DenseNet> actors;  // one if parameters are shared
  std::vector<nn::OptimizerState> actor_opt;
  nn::DenseNet critic;
  nn::OptimizerState critic_opt;
  RunningMeanStd value_norm;

  static Agents create(const EnvConfig& env, const TrainConfig& train, std::uint64_t seed);

  int actor_input_width() const;
  int critic_input_width() const { return state_width(env); }
  std::size_t actor_index(int agent) const;
  const nn::DenseNet& actor(int agent) const { return actors.at(actor_index(agent)); }

  /// Local observation plus a one-hot agent id when actors are shared.
  std::vector<double> actor_input(const KnowledgeSnapshot& snapshot, int agent) const;
  /// Critic estimate on the full state, in reward units.
  double value(const WorldState& world) const;
  double value_from_state(std::span<const double> encoded_state) const;
  /// Throws ContractError if network widths do not match the encodings.
  void check_shapes() const;
};

struct Decision {
  nn::ActorAction action;
  double log_prob = 0.0;
  std::vector<double> obs;
  std::vector<double> dispatch_obs;  // only with two_phase
};

/// One actor's choice from its own knowledge; sampled when `rng` is given,
/// greedy otherwise.
Decision decide(const Agents& agents, const Environment& env, int agent, Rng* rng);

/// Heads for a stored decision input pair.
nn::PolicyHeads actor_heads(const Agents& agents, int agent, std::span<const double> obs,
                            std::span<const double> dispatch_obs);

class MappoPolicy final : public JointPolicy {
 public:
  MappoPolicy(std::shared_ptr<const Agents> agents, ExecutionMode mode)
      : agents_(std::move(agents)), mode_(mode) {}

  JointAction act(const Environment& env, Rng& rng) const override;
  std::string name() const override { return "mappo"; }

 private:
  std::shared_ptr<const Agents> agents_;
  ExecutionMode mode_;
};

// ------------------------------------------------------------------ rollout

struct ActorRecord {
  int agent = 0;
  std::size_t slot = 0;  // index into the per-slot arrays
  std::vector<double> obs;
  std::vector<double> dispatch_obs;
  nn::ActorAction action;
  double log_prob = 0.0;  // behaviour policy
};

struct RolloutBuffer {
  int n_agents = 0;
  std::vector<ActorRecord> actors;          // slots x agents, slot-major
  std::vector<std::vector<double>> states;  // encoded full state per slot
  std::vector<double> rewards;              // team reward per slot
  std::vector<double> values;               // V(s_t)
  std::vector<double> next_values;          // V(s_{t+1}) of the true successor
  Bits boundary;                            // no bootstrapping across this slot
  std::vector<double> advantages;
  std::vector<double> returns;

  std::size_t slots() const { return rewards.size(); }
  bool has_advantages() const { return !rewards.empty() && advantages.size() == rewards.size(); }
  void clear();
  void append(RolloutBuffer&& segment);
};

/// A persistent environment plus the RNG its actors sample with.
struct RolloutWorker {
  Environment env;
  Rng rng;
  std::uint64_t seed_base = 0;  // episode e restarts from derive_seed(seed_base, 0, e)
  std::uint64_t episodes = 0;
};

/// Steps the worker for `length` slots with sampled actions, resetting at the
/// horizon. The last slot and every truncated slot are marked as boundaries.
RolloutBuffer collect_rollout(RolloutWorker& worker, const Agents& agents, int length);
/// Segments from several workers, concatenated in worker order.
RolloutBuffer collect_rollout(std::span<RolloutWorker> workers, const Agents& agents, int length,
                              bool parallel = true);

// ----------------------------------------------------------- loss functions

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

/// `values` holds V(s_0..s_L), the last entry bootstrapping the tail.
GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values,
                      double discount, double lambda);
/// Segmented form: next_values[t] = V(s_{t+1}); recursion restarts after each boundary.
GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values,
                      std::span<const double> next_values, std::span<const std::uint8_t> boundary,
                      double discount, double lambda);
void compute_advantages(RolloutBuffer& buffer, double discount, double lambda);

/// Rescales to zero mean and unit standard deviation in place.
void normalize_advantages(std::span<double> advantages);

struct SurrogateResult {
  double objective = 0.0;  // mean of min(rho A, clip(rho) A) over finite samples
  double mean_ratio = 0.0;
  double clip_fraction = 0.0;
  std::size_t excluded = 0;  // non-finite ratios
};

SurrogateResult clipped_surrogate(std::span<const double> new_log_probs,
                                  std::span<const double> old_log_probs,
                                  std::span<const double> advantages, double epsilon);

double value_loss(std::span<const double> values, std::span<const double> targets);

/// -policy_term + value_coef * value_term - entropy_coef * entropy_term.
double total_loss(double policy_term, double value_term, double entropy_term, double value_coef,
                  double entropy_coef);

// ------------------------------------------------------------------- update

struct UpdateStats {
  double mean_ratio = 0.0;
  double first_minibatch_ratio = 0.0;
  double clip_fraction = 0.0;
  double surrogate = 0.0;  // L_CLIP
  double value_loss = 0.0;
  double entropy = 0.0;
  double total_loss = 0.0;
  int minibatches = 0;
  int aborted_minibatches = 0;
  int skipped_steps = 0;
  std::size_t excluded_samples = 0;
};

/// PPO epochs over shuffled minibatches. Advantages must already be computed.
UpdateStats mappo_update(RolloutBuffer& buffer, Agents& agents, Rng& rng, bool parallel = true);

// --------------------------------------------------------------- evaluation

EvalSummary evaluate(const Agents& agents, const EnvConfig& config, int episodes,
                     std::uint64_t seed, ExecutionMode mode, bool parallel = true);

// ------------------------------------------------------------------ trainer

struct ProgressRecord {
  int update = 0;
  UpdateStats stats;
  double rollout_reward = 0.0;  // mean team reward per slot in the rollout
  std::optional<double> eval_reward;
};

using ProgressSink = std::function<void(const ProgressRecord&)>;

class Trainer {
 public:
  Trainer(const EnvConfig& env, const TrainConfig& train);
  /// Resumes from restored agents after `updates_done` updates.
  Trainer(Agents agents, int updates_done);

  ProgressRecord update();
  /// Runs until train.total_updates; `on_checkpoint` fires every eval_interval.
  void run(const ProgressSink& on_progress = {},
           const std::function<void(const Agents&, int)>& on_checkpoint = {});

  const Agents& agents() const { return *agents_; }
  std::shared_ptr<const Agents> snapshot() const { return std::make_shared<Agents>(*agents_); }
  int updates_done() const { return updates_done_; }

 private:
  void make_workers();

  std::unique_ptr<Agents> agents_;
  std::vector<RolloutWorker> workers_;
  Rng update_rng_;
  int updates_done_ = 0;
};

// -------------------------------------------------------------- checkpoints

inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const Agents& agents, int updates_done, const std::string& path);

struct Checkpoint {
  Agents agents;
  int updates_done = 0;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace edgeq::mappo
