#include "edgeq/env.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace edgeq {

namespace {

bool draw(Rng& rng, double p) { return std::bernoulli_distribution(p)(rng); }

void check_probability(const std::string& name, double p, bool open, std::size_t index) {
  const bool ok = open ? (p > 0.0 && p < 1.0) : (p >= 0.0 && p <= 1.0);
  if (!ok || std::isnan(p)) {
    throw ConfigError(name + "[" + std::to_string(index) + "] = " + std::to_string(p) +
                      (open ? " must lie in (0,1)" : " must lie in [0,1]"));
  }
}

// Lenient variant used by init_world so absorbing test chains still start sensibly.
double stationary_available(double phi, double psi) {
  const double denom = 2.0 - phi - psi;
  if (denom <= 0.0) return 0.5;
  return (1.0 - psi) / denom;
}

}  // namespace

EnvConfig EnvConfig::homogeneous(int n_dispatchers, int n_servers, double arrival,
                                 double stay_available, double stay_unavailable, int capacity,
                                 double query_cost) {
  EnvConfig c;
  c.n_dispatchers = n_dispatchers;
  c.n_servers = n_servers;
  c.arrival_prob.assign(static_cast<std::size_t>(std::max(n_dispatchers, 0)), arrival);
  c.stay_available.assign(static_cast<std::size_t>(std::max(n_servers, 0)), stay_available);
  c.stay_unavailable.assign(static_cast<std::size_t>(std::max(n_servers, 0)), stay_unavailable);
  c.queue_capacity.assign(static_cast<std::size_t>(std::max(n_servers, 0)), capacity);
  c.query_cost = query_cost;
  return c;
}

void EnvConfig::validate() const {
  if (n_dispatchers < 1) throw ConfigError("n_dispatchers must be >= 1");
  if (n_servers < 1) throw ConfigError("n_servers must be >= 1");
  const auto n = static_cast<std::size_t>(n_dispatchers);
  const auto k = static_cast<std::size_t>(n_servers);
  if (arrival_prob.size() != n) throw ConfigError("arrival_prob needs one entry per dispatcher");
  if (stay_available.size() != k) throw ConfigError("stay_available needs one entry per server");
  if (stay_unavailable.size() != k)
    throw ConfigError("stay_unavailable needs one entry per server");
  if (queue_capacity.size() != k) throw ConfigError("queue_capacity needs one entry per server");
  for (std::size_t i = 0; i < n; ++i) check_probability("arrival_prob", arrival_prob[i], false, i);
  for (std::size_t i = 0; i < k; ++i) {
    check_probability("stay_available", stay_available[i], !allow_absorbing, i);
    check_probability("stay_unavailable", stay_unavailable[i], !allow_absorbing, i);
    if (queue_capacity[i] < 1) throw ConfigError("queue_capacity must be >= 1");
  }
  if (!(query_cost >= 0.0) || !std::isfinite(query_cost))
    throw ConfigError("query_cost must be >= 0");
  if (!(discount >= 0.0 && discount < 1.0)) throw ConfigError("discount must lie in [0,1)");
  if (horizon < 1) throw ConfigError("horizon must be >= 1");
  if (aoi_cap < 1) throw ConfigError("aoi_cap must be >= 1");
}

JointAction JointAction::idle(int n_dispatchers, int n_servers) {
  JointAction a;
  a.dispatchers.resize(static_cast<std::size_t>(n_dispatchers));
  for (auto& d : a.dispatchers) d.queries.assign(static_cast<std::size_t>(n_servers), 0);
  return a;
}

std::int64_t WorldState::jobs_in_queues() const {
  std::int64_t total = 0;
  for (const auto& s : servers) total += static_cast<std::int64_t>(s.queue.size());
  return total;
}

std::pair<double, double> stationary_distribution(double stay_available,
                                                  double stay_unavailable) {
  if (!(stay_available > 0.0 && stay_available < 1.0))
    throw ConfigError("stay_available must lie in (0,1)");
  if (!(stay_unavailable > 0.0 && stay_unavailable < 1.0))
    throw ConfigError("stay_unavailable must lie in (0,1)");
  const double p0 = (1.0 - stay_unavailable) / (2.0 - stay_available - stay_unavailable);
  return {p0, 1.0 - p0};
}

WorldState init_world(const EnvConfig& config, Rng& rng) {
  config.validate();
  const auto n = static_cast<std::size_t>(config.n_dispatchers);
  const auto k = static_cast<std::size_t>(config.n_servers);

  WorldState w;
  w.servers.resize(k);
  for (std::size_t s = 0; s < k; ++s) {
    const double p_avail =
        stationary_available(config.stay_available[s], config.stay_unavailable[s]);
    w.servers[s].available = draw(rng, p_avail);
  }
  w.knowledge.assign(n, KnowledgeSnapshot{std::vector<ServerView>(k)});
  w.arrivals.resize(n);
  for (std::size_t d = 0; d < n; ++d) w.arrivals[d] = draw(rng, config.arrival_prob[d]);
  w.slot_start_queue.assign(k, 0);
  return w;
}

bool transition_availability(bool available, double stay_available, double stay_unavailable,
                             Rng& rng) {
  if (available) return draw(rng, stay_available);
  return !draw(rng, stay_unavailable);
}

void check_action(const WorldState& world, const JointAction& action, const EnvConfig& config) {
  if (action.dispatchers.size() != static_cast<std::size_t>(config.n_dispatchers))
    throw ContractError("joint action must cover every dispatcher");
  for (std::size_t d = 0; d < action.dispatchers.size(); ++d) {
    const auto& a = action.dispatchers[d];
    if (a.queries.size() != static_cast<std::size_t>(config.n_servers))
      throw ContractError("query vector must have one flag per server");
    const bool arrived = d < world.arrivals.size() && world.arrivals[d] != 0;
    if (a.dispatch) {
      if (!arrived)
        throw ContractError("dispatcher " + std::to_string(d) + " dispatched without an arrival");
      if (*a.dispatch < 0 || *a.dispatch >= config.n_servers)
        throw ContractError("dispatch target out of range");
    } else if (arrived) {
      throw ContractError("dispatcher " + std::to_string(d) + " must dispatch its arrival");
    }
  }
}

std::vector<FeedbackEvent> apply_dispatches(WorldState& world, const JointAction& action,
                                            const EnvConfig& config) {
  std::vector<FeedbackEvent> naks;
  for (std::size_t d = 0; d < action.dispatchers.size(); ++d) {
    const auto& target = action.dispatchers[d].dispatch;
    if (!target) continue;
    if (d >= world.arrivals.size() || world.arrivals[d] == 0)
      throw ContractError("dispatcher " + std::to_string(d) + " dispatched without an arrival");
    if (*target < 0 || *target >= config.n_servers)
      throw ContractError("dispatch target out of range");

    const auto k = static_cast<std::size_t>(*target);
    auto& server = world.servers[k];
    const Job job{world.next_job_id++, static_cast<int>(d), world.slot};
    ++world.jobs_dispatched;

    const int reported_queue = k < world.slot_start_queue.size()
                                   ? world.slot_start_queue[k]
                                   : static_cast<int>(server.queue.size());
    const auto capacity = static_cast<std::size_t>(config.queue_capacity[k]);
    if (server.queue.size() < capacity) {
      server.queue.push_back(job);
      continue;
    }
    Job dropped = job;
    if (config.overflow == OverflowPolicy::DropOldest) {
      dropped = server.queue.front();
      server.queue.pop_front();
      server.queue.push_back(job);
    }
    ++world.jobs_dropped;
    naks.push_back(FeedbackEvent{dropped.owner, static_cast<int>(k), dropped, false,
                                 server.available, reported_queue});
  }
  return naks;
}

std::vector<FeedbackEvent> serve(WorldState& world) {
  std::vector<FeedbackEvent> acks;
  for (std::size_t k = 0; k < world.servers.size(); ++k) {
    auto& server = world.servers[k];
    if (!server.available || server.queue.empty()) continue;
    const Job job = server.queue.front();
    server.queue.pop_front();
    ++world.jobs_completed;
    const int reported_queue = k < world.slot_start_queue.size()
                                   ? world.slot_start_queue[k]
                                   : static_cast<int>(server.queue.size()) + 1;
    acks.push_back(FeedbackEvent{job.owner, static_cast<int>(k), job, true, true, reported_queue});
  }
  return acks;
}

std::vector<QueryResponse> process_queries(const WorldState& world, const JointAction& action) {
  std::vector<QueryResponse> out;
  for (std::size_t d = 0; d < action.dispatchers.size(); ++d) {
    const auto& q = action.dispatchers[d].queries;
    for (std::size_t k = 0; k < q.size() && k < world.servers.size(); ++k) {
      if (q[k] == 0) continue;
      out.push_back(QueryResponse{static_cast<int>(d), static_cast<int>(k),
                                  world.servers[k].available,
                                  static_cast<int>(world.servers[k].queue.size())});
    }
  }
  return out;
}

void update_aoi(WorldState& world, std::span<const FeedbackEvent> feedback,
                std::span<const QueryResponse> responses) {
  const std::size_t n = world.knowledge.size();
  const std::size_t k = world.servers.size();
  std::vector<std::uint8_t> fresh(n * k, 0);

  for (const auto& ev : feedback) {
    auto& view = world.knowledge[static_cast<std::size_t>(ev.dispatcher)]
                     .servers[static_cast<std::size_t>(ev.server)];
    view.seen_available = ev.reported_available;
    view.seen_queue = ev.reported_queue;
    fresh[static_cast<std::size_t>(ev.dispatcher) * k + static_cast<std::size_t>(ev.server)] = 1;
  }
  // Query answers overwrite feedback from the same slot.
  for (const auto& r : responses) {
    auto& view = world.knowledge[static_cast<std::size_t>(r.dispatcher)]
                     .servers[static_cast<std::size_t>(r.server)];
    view.seen_available = r.reported_available;
    view.seen_queue = r.reported_queue;
    fresh[static_cast<std::size_t>(r.dispatcher) * k + static_cast<std::size_t>(r.server)] = 1;
  }
  for (std::size_t d = 0; d < n; ++d) {
    for (std::size_t s = 0; s < k; ++s) {
      auto& view = world.knowledge[d].servers[s];
      view.aoi = fresh[d * k + s] ? 1 : view.aoi + 1;
    }
  }
}

RewardTerms compute_rewards(std::span<const FeedbackEvent> feedback, const JointAction& action,
                            const EnvConfig& config) {
  const auto n = static_cast<std::size_t>(config.n_dispatchers);
  RewardTerms t;
  t.rewards.assign(n, 0.0);
  t.completions.assign(n, 0);
  t.drops.assign(n, 0);
  t.queries.assign(n, 0);
  for (const auto& ev : feedback) {
    auto& bucket = ev.accepted ? t.completions : t.drops;
    ++bucket[static_cast<std::size_t>(ev.dispatcher)];
  }
  for (std::size_t d = 0; d < n && d < action.dispatchers.size(); ++d) {
    int count = 0;
    for (auto c : action.dispatchers[d].queries) count += c != 0;
    t.queries[d] = count;
    t.total_queries += count;
  }
  for (std::size_t d = 0; d < n; ++d) {
    t.rewards[d] = static_cast<double>(t.completions[d]) -
                   config.query_cost * static_cast<double>(t.queries[d]);
  }
  // Summed in dispatcher order so R equals the sum of r_n bit for bit.
  for (double r : t.rewards) t.team_reward += r;
  return t;
}

void begin_slot(WorldState& world) {
  world.slot_start_queue.resize(world.servers.size());
  for (std::size_t s = 0; s < world.servers.size(); ++s)
    world.slot_start_queue[s] = static_cast<int>(world.servers[s].queue.size());
}

StepOutcome step(WorldState& world, const JointAction& action, const EnvConfig& config,
                 Rng& rng) {
  check_action(world, action, config);
  const std::size_t k = world.servers.size();

  begin_slot(world);

  StepOutcome out;
  out.responses = process_queries(world, action);
  out.feedback = apply_dispatches(world, action, config);
  auto acks = serve(world);
  out.feedback.insert(out.feedback.end(), acks.begin(), acks.end());

  if (config.feedback_report == FeedbackReport::PostService) {
    for (auto& ev : out.feedback)
      ev.reported_queue = static_cast<int>(world.servers[static_cast<std::size_t>(ev.server)]
                                               .queue.size());
  }

  auto terms = compute_rewards(out.feedback, action, config);
  out.rewards = std::move(terms.rewards);
  out.team_reward = terms.team_reward;
  out.completions = std::move(terms.completions);
  out.drops = std::move(terms.drops);
  out.queries = std::move(terms.queries);
  out.total_queries = terms.total_queries;

  update_aoi(world, out.feedback, out.responses);

  for (std::size_t s = 0; s < k; ++s) {
    auto& server = world.servers[s];
    server.available = transition_availability(server.available, config.stay_available[s],
                                               config.stay_unavailable[s], rng);
  }
  for (std::size_t d = 0; d < world.arrivals.size(); ++d)
    world.arrivals[d] = draw(rng, config.arrival_prob[d]);

  ++world.slot;
  world.pending_feedback = out.feedback;
  out.observations = world.knowledge;
  out.next_arrivals = world.arrivals;
  return out;
}

KnowledgeSnapshot observe(const WorldState& world, int dispatcher) {
  if (dispatcher < 0 || static_cast<std::size_t>(dispatcher) >= world.knowledge.size())
    throw ContractError("dispatcher index out of range");
  return world.knowledge[static_cast<std::size_t>(dispatcher)];
}

Environment::Environment(EnvConfig config) : config_(std::move(config)) {
  config_.validate();
  reset(config_.seed);
}

void Environment::reset() { reset(config_.seed); }

void Environment::reset(std::uint64_t seed) {
  rng_.seed(seed);
  world_ = init_world(config_, rng_);
}

StepOutcome Environment::step(const JointAction& action) {
  if (done()) throw ContractError("episode horizon reached; call reset()");
  return edgeq::step(world_, action, config_, rng_);
}

std::vector<QueryResponse> Environment::peek_queries(const JointAction& action) const {
  return process_queries(world_, action);
}

KnowledgeSnapshot Environment::observe(int dispatcher) const {
  return edgeq::observe(world_, dispatcher);
}

}  // namespace edgeq
