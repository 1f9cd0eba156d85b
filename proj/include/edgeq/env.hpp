#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace edgeq {

using Rng = std::mt19937_64;
using Bits = std::vector<std::uint8_t>;

/// Raised for invalid static parameters (config files, sweep specs, checkpoints).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a caller breaks an operation's precondition.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

enum class OverflowPolicy { DropOldest, DropNewest };
enum class FeedbackReport { SlotStart, PostService };

struct EnvConfig {
  int n_dispatchers = 0;
  int n_servers = 0;
  std::vector<double> arrival_prob;      // per dispatcher
  std::vector<double> stay_available;    // per server, P(available -> available)
  std::vector<double> stay_unavailable;  // per server, P(unavailable -> unavailable)
  std::vector<int> queue_capacity;       // per server
  double query_cost = 0.0;
  double discount = 0.99;
  int horizon = 512;
  std::uint64_t seed = 1;
  int aoi_cap = 64;
  OverflowPolicy overflow = OverflowPolicy::DropOldest;
  FeedbackReport feedback_report = FeedbackReport::SlotStart;
  // Test-only: admits absorbing chains (stay probabilities of exactly 0 or 1).
  bool allow_absorbing = false;

  static EnvConfig homogeneous(int n_dispatchers, int n_servers, double arrival,
                               double stay_available, double stay_unavailable,
                               int capacity, double query_cost = 0.0);

  /// Throws ConfigError naming the first offending field.
  void validate() const;
};

struct Job {
  std::uint64_t id = 0;
  int owner = 0;
  std::int64_t dispatch_slot = 0;

  friend bool operator==(const Job&, const Job&) = default;
};

struct ServerState {
  bool available = true;
  std::deque<Job> queue;

  friend bool operator==(const ServerState&, const ServerState&) = default;
};

struct ServerView {
  bool seen_available = true;
  int seen_queue = 0;
  int aoi = 1;

  friend bool operator==(const ServerView&, const ServerView&) = default;
};

/// One dispatcher's stale picture of every server.
struct KnowledgeSnapshot {
  std::vector<ServerView> servers;

  friend bool operator==(const KnowledgeSnapshot&, const KnowledgeSnapshot&) = default;
};

struct FeedbackEvent {
  int dispatcher = 0;
  int server = 0;
  Job job;
  bool accepted = false;  // ACK on completion, NAK on overflow drop
  bool reported_available = false;
  int reported_queue = 0;

  friend bool operator==(const FeedbackEvent&, const FeedbackEvent&) = default;
};

struct QueryResponse {
  int dispatcher = 0;
  int server = 0;
  bool reported_available = false;
  int reported_queue = 0;

  friend bool operator==(const QueryResponse&, const QueryResponse&) = default;
};

struct DispatcherAction {
  Bits queries;                 // one flag per server
  std::optional<int> dispatch;  // target server when a job arrived

  friend bool operator==(const DispatcherAction&, const DispatcherAction&) = default;
};

struct JointAction {
  std::vector<DispatcherAction> dispatchers;

  /// No queries and no dispatches.
  static JointAction idle(int n_dispatchers, int n_servers);

  friend bool operator==(const JointAction&, const JointAction&) = default;
};

struct WorldState {
  std::int64_t slot = 0;
  std::vector<ServerState> servers;
  std::vector<KnowledgeSnapshot> knowledge;
  std::vector<FeedbackEvent> pending_feedback;
  Bits arrivals;                     // job arrivals of the current slot
  std::vector<int> slot_start_queue; // q_k(t) as seen when the slot opened
  std::uint64_t next_job_id = 1;

  // Episode counters, used for conservation checks.
  std::int64_t jobs_dispatched = 0;
  std::int64_t jobs_completed = 0;
  std::int64_t jobs_dropped = 0;

  std::int64_t jobs_in_queues() const;

  friend bool operator==(const WorldState&, const WorldState&) = default;
};

struct StepOutcome {
  std::vector<double> rewards;  // per dispatcher
  double team_reward = 0.0;
  std::vector<int> completions; // ACKs per dispatcher
  std::vector<int> drops;       // NAKs per dispatcher
  std::vector<int> queries;     // queries issued per dispatcher
  int total_queries = 0;
  std::vector<FeedbackEvent> feedback;
  std::vector<QueryResponse> responses;
  std::vector<KnowledgeSnapshot> observations;  // after the slot
  Bits next_arrivals;

  friend bool operator==(const StepOutcome&, const StepOutcome&) = default;
};

struct RewardTerms {
  std::vector<double> rewards;
  double team_reward = 0.0;
  std::vector<int> completions;
  std::vector<int> drops;
  std::vector<int> queries;
  int total_queries = 0;
};

/// Stationary law of the two-state availability chain, returned as
/// (P[available], P[unavailable]). Inputs must lie in (0,1).
std::pair<double, double> stationary_distribution(double stay_available,
                                                  double stay_unavailable);

WorldState init_world(const EnvConfig& config, Rng& rng);

/// One transition of a server's availability chain.
bool transition_availability(bool available, double stay_available,
                             double stay_unavailable, Rng& rng);

/// Records slot-start queue lengths; feedback of this slot reports them.
void begin_slot(WorldState& world);

/// Appends jobs of dispatching dispatchers in ascending index order and
/// resolves overflow. Returns NAKs for evicted jobs.
std::vector<FeedbackEvent> apply_dispatches(WorldState& world, const JointAction& action,
                                            const EnvConfig& config);

/// Each available server with a nonempty queue completes its head job.
std::vector<FeedbackEvent> serve(WorldState& world);

/// Answers queries from the live world; called before any dispatch, so
/// the values are the slot-start ones. Pure read.
std::vector<QueryResponse> process_queries(const WorldState& world, const JointAction& action);

void update_aoi(WorldState& world, std::span<const FeedbackEvent> feedback,
                std::span<const QueryResponse> responses);

RewardTerms compute_rewards(std::span<const FeedbackEvent> feedback, const JointAction& action,
                            const EnvConfig& config);

/// Throws ContractError on malformed actions or dispatch/arrival mismatch.
void check_action(const WorldState& world, const JointAction& action, const EnvConfig& config);

/// Advances the world by one slot in the fixed order: queries, dispatches,
/// service, rewards, AoI, availability transitions, next arrivals.
StepOutcome step(WorldState& world, const JointAction& action, const EnvConfig& config,
                 Rng& rng);

KnowledgeSnapshot observe(const WorldState& world, int dispatcher);

/// Seeded, self-contained environment. Owns its world and RNG.
class Environment {
 public:
  explicit Environment(EnvConfig config);

  void reset();
  void reset(std::uint64_t seed);

  StepOutcome step(const JointAction& action);

  /// What this slot's queries would return, without advancing the world.
  std::vector<QueryResponse> peek_queries(const JointAction& action) const;

  KnowledgeSnapshot observe(int dispatcher) const;
  const WorldState& world() const { return world_; }
  const EnvConfig& config() const { return config_; }
  const Bits& arrivals() const { return world_.arrivals; }
  bool done() const { return world_.slot >= config_.horizon; }

 private:
  EnvConfig config_;
  Rng rng_;
  WorldState world_;
};

}  // namespace edgeq
