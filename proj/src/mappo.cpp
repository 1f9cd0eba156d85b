#include "edgeq/mappo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "edgeq/parallel.hpp"

namespace edgeq::mappo {

const char* to_string(ExecutionMode m) { return m == ExecutionMode::Greedy ? "greedy" : "sampled"; }

ExecutionMode execution_mode_from_string(const std::string& s) {
  if (s == "greedy") return ExecutionMode::Greedy;
  if (s == "sampled") return ExecutionMode::Sampled;
  throw ConfigError("execution mode must be greedy or sampled, got '" + s + "'");
}

void TrainConfig::validate() const {
  if (!(clip_epsilon > 0.0)) throw ConfigError("clip_epsilon must be > 0");
  if (!(value_coef > 0.0)) throw ConfigError("value_coef must be > 0");
  if (!(entropy_coef > 0.0)) throw ConfigError("entropy_coef must be > 0");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw ConfigError("gae_lambda must lie in [0,1]");
  if (rollout_length < 1) throw ConfigError("rollout_length must be >= 1");
  if (epochs_per_update < 1) throw ConfigError("epochs_per_update must be >= 1");
  if (minibatch_count < 1) throw ConfigError("minibatch_count must be >= 1");
  if (total_updates < 0) throw ConfigError("total_updates must be >= 0");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (hidden_units < 1 || hidden_layers < 0) throw ConfigError("invalid hidden layer shape");
  if (workers < 1) throw ConfigError("workers must be >= 1");
  if (eval_interval < 0 || eval_episodes < 1) throw ConfigError("invalid evaluation schedule");
}

// --------------------------------------------------------------- encodings

int observation_width(const EnvConfig& config) { return 3 * config.n_servers; }

int state_width(const EnvConfig& config) {
  return 2 * config.n_servers + config.n_dispatchers * config.n_servers;
}

std::vector<double> encode_observation(const KnowledgeSnapshot& snapshot, const EnvConfig& config) {
  const auto k = static_cast<std::size_t>(config.n_servers);
  if (snapshot.servers.size() != k) throw ContractError("snapshot width does not match config");
  const double cap = static_cast<double>(config.aoi_cap);
  std::vector<double> x;
  x.reserve(3 * k);
  for (std::size_t s = 0; s < k; ++s) {
    const auto& v = snapshot.servers[s];
    x.push_back(v.seen_available ? 1.0 : 0.0);
    x.push_back(static_cast<double>(v.seen_queue) / config.queue_capacity[s]);
    x.push_back(std::min(static_cast<double>(v.aoi), cap) / cap);
  }
  return x;
}

std::vector<double> encode_state(const WorldState& world, const EnvConfig& config) {
  const auto k = static_cast<std::size_t>(config.n_servers);
  const double cap = static_cast<double>(config.aoi_cap);
  std::vector<double> x;
  x.reserve(static_cast<std::size_t>(state_width(config)));
  for (std::size_t s = 0; s < k; ++s) x.push_back(world.servers[s].available ? 1.0 : 0.0);
  for (std::size_t s = 0; s < k; ++s)
    x.push_back(static_cast<double>(world.servers[s].queue.size()) / config.queue_capacity[s]);
  for (const auto& snap : world.knowledge)
    for (const auto& v : snap.servers) x.push_back(std::min(static_cast<double>(v.aoi), cap) / cap);
  return x;
}

void RunningMeanStd::update(std::span<const double> xs) {
  if (xs.empty()) return;
  const double n = static_cast<double>(xs.size());
  const double batch_mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  double m2 = 0.0;
  for (double x : xs) m2 += (x - batch_mean) * (x - batch_mean);
  const double batch_var = m2 / n;

  const double delta = batch_mean - mean;
  const double total = count + n;
  mean += delta * n / total;
  var = (var * count + batch_var * n + delta * delta * count * n / total) / total;
  count = total;
}

double RunningMeanStd::stddev() const { return std::sqrt(std::max(var, 1e-8)); }

// ------------------------------------------------------------------- agents

Agents Agents::create(const EnvConfig& env, const TrainConfig& train, std::uint64_t seed) {
  env.validate();
  train.validate();
  Agents a;
  a.env = env;
  a.train = train;
  Rng rng(derive_seed(seed, 7, 0));

  std::vector<int> actor_sizes{a.actor_input_width()};
  std::vector<int> critic_sizes{a.critic_input_width()};
  for (int l = 0; l < train.hidden_layers; ++l) {
    actor_sizes.push_back(train.hidden_units);
    critic_sizes.push_back(train.hidden_units);
  }
  actor_sizes.push_back(2 * env.n_servers);
  critic_sizes.push_back(1);

  nn::AdamConfig adam;
  adam.learning_rate = train.learning_rate;
  adam.max_grad_norm = train.max_grad_norm;

  const int n_actors = train.parameter_sharing ? 1 : env.n_dispatchers;
  for (int i = 0; i < n_actors; ++i) {
    a.actors.emplace_back(actor_sizes, nn::Activation::Tanh, rng, 0.01);
    a.actor_opt.emplace_back(adam, a.actors.back().parameter_count());
  }
  a.critic = nn::DenseNet(critic_sizes, nn::Activation::Tanh, rng, 1.0);
  a.critic_opt = nn::OptimizerState(adam, a.critic.parameter_count());
  return a;
}

int Agents::actor_input_width() const {
  return observation_width(env) + (train.parameter_sharing ? env.n_dispatchers : 0);
}

std::size_t Agents::actor_index(int agent) const {
  if (agent < 0 || agent >= env.n_dispatchers) throw ContractError("agent index out of range");
  return train.parameter_sharing ? 0 : static_cast<std::size_t>(agent);
}

std::vector<double> Agents::actor_input(const KnowledgeSnapshot& snapshot, int agent) const {
  auto x = encode_observation(snapshot, env);
  if (train.parameter_sharing) {
    for (int n = 0; n < env.n_dispatchers; ++n) x.push_back(n == agent ? 1.0 : 0.0);
  }
  return x;
}

double Agents::value_from_state(std::span<const double> encoded_state) const {
  const double y = critic.forward(encoded_state).front();
  return train.value_normalization ? value_norm.denormalize(y) : y;
}

double Agents::value(const WorldState& world) const {
  return value_from_state(encode_state(world, env));
}

void Agents::check_shapes() const {
  const std::size_t want = train.parameter_sharing ? 1 : static_cast<std::size_t>(env.n_dispatchers);
  if (actors.size() != want || actor_opt.size() != want)
    throw ContractError("actor count does not match the sharing mode");
  for (std::size_t i = 0; i < actors.size(); ++i) {
    if (actors[i].input_size() != actor_input_width())
      throw ContractError("actor input width does not match the local observation encoding");
    if (actors[i].output_size() != 2 * env.n_servers)
      throw ContractError("actor output must hold query and dispatch logits");
    if (actor_opt[i].first_moment.size() != actors[i].parameter_count())
      throw ContractError("actor optimizer shape mismatch");
  }
  if (critic.input_size() != critic_input_width() || critic.output_size() != 1)
    throw ContractError("critic width does not match the full-state encoding");
  if (critic_opt.first_moment.size() != critic.parameter_count())
    throw ContractError("critic optimizer shape mismatch");
}

nn::PolicyHeads actor_heads(const Agents& agents, int agent, std::span<const double> obs,
                            std::span<const double> dispatch_obs) {
  const auto& net = agents.actor(agent);
  const auto out = net.forward(obs);
  if (dispatch_obs.empty()) return nn::make_heads(out);
  const auto out2 = net.forward(dispatch_obs);
  const auto k = static_cast<std::size_t>(agents.env.n_servers);
  return nn::make_heads(std::span<const double>(out).subspan(0, k),
                        std::span<const double>(out2).subspan(k, k));
}

Decision decide(const Agents& agents, const Environment& env, int agent, Rng* rng) {
  Decision d;
  const auto& snapshot = env.world().knowledge.at(static_cast<std::size_t>(agent));
  const bool arrival = env.arrivals()[static_cast<std::size_t>(agent)] != 0;
  d.obs = agents.actor_input(snapshot, agent);

  nn::PolicyHeads heads = actor_heads(agents, agent, d.obs, {});
  if (!agents.train.two_phase) {
    d.action = rng ? nn::sample_action(heads, arrival, *rng) : nn::greedy_action(heads, arrival);
  } else {
    d.action = rng ? nn::sample_action(heads, false, *rng) : nn::greedy_action(heads, false);
    if (arrival) {
      JointAction probe = JointAction::idle(agents.env.n_dispatchers, agents.env.n_servers);
      probe.dispatchers[static_cast<std::size_t>(agent)].queries = d.action.queries;
      const auto fresh = overlay_responses(snapshot, agent, env.peek_queries(probe));
      d.dispatch_obs = agents.actor_input(fresh, agent);
      heads = actor_heads(agents, agent, d.obs, d.dispatch_obs);
      const auto second =
          rng ? nn::sample_action(heads, true, *rng) : nn::greedy_action(heads, true);
      d.action.dispatch = second.dispatch;
    }
  }
  d.log_prob = nn::log_prob_and_entropy(heads, d.action).log_prob;
  return d;
}

JointAction MappoPolicy::act(const Environment& env, Rng& rng) const {
  JointAction joint;
  const int n = env.config().n_dispatchers;
  joint.dispatchers.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    auto d = decide(*agents_, env, i, mode_ == ExecutionMode::Sampled ? &rng : nullptr);
    joint.dispatchers.push_back(DispatcherAction{std::move(d.action.queries), d.action.dispatch});
  }
  return joint;
}

// ------------------------------------------------------------------ rollout

void RolloutBuffer::clear() {
  const int n = n_agents;
  *this = RolloutBuffer{};
  n_agents = n;
}

void RolloutBuffer::append(RolloutBuffer&& seg) {
  if (n_agents == 0) n_agents = seg.n_agents;
  if (seg.n_agents != n_agents) throw ContractError("rollout segments disagree on agent count");
  const std::size_t offset = slots();
  for (auto& r : seg.actors) {
    r.slot += offset;
    actors.push_back(std::move(r));
  }
  auto move_into = [](auto& dst, auto& src) {
    dst.insert(dst.end(), std::make_move_iterator(src.begin()), std::make_move_iterator(src.end()));
  };
  move_into(states, seg.states);
  move_into(rewards, seg.rewards);
  move_into(values, seg.values);
  move_into(next_values, seg.next_values);
  move_into(boundary, seg.boundary);
  advantages.clear();
  returns.clear();
}

RolloutBuffer collect_rollout(RolloutWorker& worker, const Agents& agents, int length) {
  if (length < 1) throw ContractError("rollout length must be positive");
  const int n = agents.env.n_dispatchers;
  RolloutBuffer buf;
  buf.n_agents = n;
  const auto len = static_cast<std::size_t>(length);
  buf.actors.reserve(len * static_cast<std::size_t>(n));
  buf.states.reserve(len);

  for (std::size_t t = 0; t < len; ++t) {
    auto state = encode_state(worker.env.world(), agents.env);
    buf.values.push_back(agents.value_from_state(state));
    buf.states.push_back(std::move(state));

    JointAction joint;
    joint.dispatchers.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      auto d = decide(agents, worker.env, i, &worker.rng);
      joint.dispatchers.push_back(DispatcherAction{d.action.queries, d.action.dispatch});
      buf.actors.push_back(ActorRecord{i, t, std::move(d.obs), std::move(d.dispatch_obs),
                                       std::move(d.action), d.log_prob});
    }
    const StepOutcome out = worker.env.step(joint);
    buf.rewards.push_back(out.team_reward);

    const bool truncated = worker.env.done();
    const bool last = t + 1 == len;
    if (truncated || last) {
      buf.next_values.push_back(agents.value(worker.env.world()));
      buf.boundary.push_back(1);
    } else {
      buf.next_values.push_back(0.0);  // filled from values[t + 1] below
      buf.boundary.push_back(0);
    }
    if (truncated) worker.env.reset(derive_seed(worker.seed_base, 0, ++worker.episodes));
  }
  for (std::size_t t = 0; t + 1 < len; ++t)
    if (!buf.boundary[t]) buf.next_values[t] = buf.values[t + 1];
  return buf;
}

RolloutBuffer collect_rollout(std::span<RolloutWorker> workers, const Agents& agents, int length,
                              bool parallel) {
  auto one = [&](std::size_t w) { return collect_rollout(workers[w], agents, length); };
  auto segments = parallel ? par::map_parallel<RolloutBuffer>(workers.size(), one)
                           : par::map_serial<RolloutBuffer>(workers.size(), one);
  RolloutBuffer buf;
  buf.n_agents = agents.env.n_dispatchers;
  for (auto& s : segments) buf.append(std::move(s));
  return buf;
}

// ----------------------------------------------------------- loss functions

GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values,
                      double discount, double lambda) {
  if (values.size() != rewards.size() + 1)
    throw ContractError("GAE needs one value per slot plus a bootstrap value");
  std::vector<double> next(values.begin() + 1, values.end());
  Bits boundary(rewards.size(), 0);
  if (!boundary.empty()) boundary.back() = 1;
  return compute_gae(rewards, values.first(rewards.size()), next, boundary, discount, lambda);
}

GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values,
                      std::span<const double> next_values, std::span<const std::uint8_t> boundary,
                      double discount, double lambda) {
  const std::size_t n = rewards.size();
  if (values.size() != n || next_values.size() != n || boundary.size() != n)
    throw ContractError("GAE inputs must have one entry per slot");
  if (n > 0 && !boundary[n - 1]) throw ContractError("last slot must be a boundary");
  GaeResult r;
  r.advantages.assign(n, 0.0);
  r.returns.assign(n, 0.0);
  double running = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const double delta = rewards[i] + discount * next_values[i] - values[i];
    running = delta + (boundary[i] ? 0.0 : discount * lambda * running);
    r.advantages[i] = running;
    r.returns[i] = running + values[i];
  }
  return r;
}

void compute_advantages(RolloutBuffer& buffer, double discount, double lambda) {
  auto g = compute_gae(buffer.rewards, buffer.values, buffer.next_values, buffer.boundary, discount,
                       lambda);
  buffer.advantages = std::move(g.advantages);
  buffer.returns = std::move(g.returns);
}

void normalize_advantages(std::span<double> adv) {
  if (adv.empty()) return;
  const double n = static_cast<double>(adv.size());
  const double mean = std::accumulate(adv.begin(), adv.end(), 0.0) / n;
  double sq = 0.0;
  for (double a : adv) sq += (a - mean) * (a - mean);
  const double sd = std::sqrt(sq / n);
  for (double& a : adv) a = (a - mean) / (sd + 1e-8);
}

namespace {

struct SampleTerms {
  double objective = 0.0;
  double ratio = 0.0;
  bool clipped = false;
  bool finite = true;
  double ratio_grad = 0.0;  // d objective / d log_prob
};

SampleTerms surrogate_terms(double new_lp, double old_lp, double adv, double eps) {
  SampleTerms t;
  t.ratio = std::exp(new_lp - old_lp);
  if (!std::isfinite(t.ratio)) {
    t.finite = false;
    return t;
  }
  const double clipped_ratio = std::clamp(t.ratio, 1.0 - eps, 1.0 + eps);
  const double unclipped = t.ratio * adv;
  const double clipped = clipped_ratio * adv;
  t.clipped = std::abs(t.ratio - 1.0) > eps;
  if (unclipped <= clipped) {
    t.objective = unclipped;
    t.ratio_grad = unclipped;
  } else {
    t.objective = clipped;
  }
  return t;
}

}  // namespace

SurrogateResult clipped_surrogate(std::span<const double> new_log_probs,
                                  std::span<const double> old_log_probs,
                                  std::span<const double> advantages, double epsilon) {
  if (new_log_probs.size() != old_log_probs.size() || new_log_probs.size() != advantages.size())
    throw ContractError("surrogate inputs must have equal length");
  SurrogateResult r;
  std::size_t used = 0;
  std::size_t clipped = 0;
  for (std::size_t i = 0; i < advantages.size(); ++i) {
    const auto t = surrogate_terms(new_log_probs[i], old_log_probs[i], advantages[i], epsilon);
    if (!t.finite) {
      ++r.excluded;
      continue;
    }
    r.objective += t.objective;
    r.mean_ratio += t.ratio;
    clipped += t.clipped;
    ++used;
  }
  if (used > 0) {
    r.objective /= static_cast<double>(used);
    r.mean_ratio /= static_cast<double>(used);
    r.clip_fraction = static_cast<double>(clipped) / static_cast<double>(used);
  }
  return r;
}

double value_loss(std::span<const double> values, std::span<const double> targets) {
  if (values.size() != targets.size()) throw ContractError("value loss inputs differ in length");
  if (values.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) s += (values[i] - targets[i]) * (values[i] - targets[i]);
  return s / static_cast<double>(values.size());
}

double total_loss(double policy_term, double value_term, double entropy_term, double value_coef,
                  double entropy_coef) {
  return -policy_term + value_coef * value_term - entropy_coef * entropy_term;
}

// ------------------------------------------------------------------- update

namespace {

struct ActorAcc {
  double objective = 0.0;
  double ratio = 0.0;
  double entropy = 0.0;
  std::size_t clipped = 0;
  std::size_t used = 0;
  std::size_t excluded = 0;

  ActorAcc& operator+=(const ActorAcc& o) {
    objective += o.objective;
    ratio += o.ratio;
    entropy += o.entropy;
    clipped += o.clipped;
    used += o.used;
    excluded += o.excluded;
    return *this;
  }
};

template <class Acc, class Fn>
Acc run_kernel(bool parallel, std::size_t count, std::span<double> grad, Fn&& fn) {
  return parallel ? par::sum_gradients_parallel<Acc>(count, grad, fn)
                  : par::sum_gradients_serial<Acc>(count, grad, fn);
}

}  // namespace

UpdateStats mappo_update(RolloutBuffer& buffer, Agents& agents, Rng& rng, bool parallel) {
  if (!buffer.has_advantages()) throw ContractError("advantages must be computed before updating");
  agents.check_shapes();
  const auto& cfg = agents.train;
  const auto k = static_cast<std::size_t>(agents.env.n_servers);

  std::vector<double> adv = buffer.advantages;
  if (cfg.normalize_advantages) normalize_advantages(adv);

  std::vector<double> targets = buffer.returns;
  if (cfg.value_normalization) {
    agents.value_norm.update(buffer.returns);
    for (double& t : targets) t = agents.value_norm.normalize(t);
  }

  std::vector<std::size_t> actor_offset(agents.actors.size() + 1, 0);
  for (std::size_t a = 0; a < agents.actors.size(); ++a)
    actor_offset[a + 1] = actor_offset[a] + agents.actors[a].parameter_count();

  std::vector<std::size_t> actor_order(buffer.actors.size());
  std::iota(actor_order.begin(), actor_order.end(), 0);
  std::vector<std::size_t> slot_order(buffer.slots());
  std::iota(slot_order.begin(), slot_order.end(), 0);

  UpdateStats stats;
  ActorAcc actor_total;
  double value_total = 0.0;
  std::size_t value_count = 0;
  const auto mb_count = static_cast<std::size_t>(cfg.minibatch_count);

  for (int epoch = 0; epoch < cfg.epochs_per_update; ++epoch) {
    std::shuffle(actor_order.begin(), actor_order.end(), rng);
    std::shuffle(slot_order.begin(), slot_order.end(), rng);

    for (std::size_t mb = 0; mb < mb_count; ++mb) {
      ++stats.minibatches;
      // ---- actors
      const std::size_t a_begin = mb * actor_order.size() / mb_count;
      const std::size_t a_end = (mb + 1) * actor_order.size() / mb_count;
      const std::size_t batch = a_end - a_begin;
      std::vector<double> grad(actor_offset.back(), 0.0);
      const double inv_b = batch > 0 ? 1.0 / static_cast<double>(batch) : 0.0;

      auto actor_sample = [&](std::size_t i, std::span<double> g) {
        ActorAcc acc;
        const auto& rec = buffer.actors[actor_order[a_begin + i]];
        const std::size_t ai = agents.actor_index(rec.agent);
        const auto& net = agents.actors[ai];
        auto g_actor = g.subspan(actor_offset[ai], net.parameter_count());

        nn::Tape t1;
        nn::Tape t2;
        const auto out1 = net.forward(rec.obs, t1);
        const bool two = !rec.dispatch_obs.empty();
        nn::PolicyHeads heads;
        if (two) {
          const auto out2 = net.forward(rec.dispatch_obs, t2);
          heads = nn::make_heads(out1.subspan(0, k), out2.subspan(k, k));
        } else {
          heads = nn::make_heads(out1);
        }
        const auto lpe = nn::log_prob_and_entropy(heads, rec.action);
        const auto t = surrogate_terms(lpe.log_prob, rec.log_prob, adv[rec.slot], cfg.clip_epsilon);
        if (!t.finite) {
          acc.excluded = 1;
          return acc;
        }
        acc.objective = t.objective;
        acc.ratio = t.ratio;
        acc.entropy = lpe.entropy;
        acc.clipped = t.clipped ? 1 : 0;
        acc.used = 1;

        std::vector<double> dq(k), du(k);
        nn::head_gradient(heads, rec.action, -t.ratio_grad * inv_b, -cfg.entropy_coef * inv_b, dq,
                          du);
        std::vector<double> upstream(2 * k, 0.0);
        std::copy(dq.begin(), dq.end(), upstream.begin());
        if (two) {
          net.backward(t1, upstream, g_actor);
          std::fill(upstream.begin(), upstream.end(), 0.0);
          std::copy(du.begin(), du.end(), upstream.begin() + static_cast<std::ptrdiff_t>(k));
          net.backward(t2, upstream, g_actor);
        } else {
          std::copy(du.begin(), du.end(), upstream.begin() + static_cast<std::ptrdiff_t>(k));
          net.backward(t1, upstream, g_actor);
        }
        return acc;
      };
      const ActorAcc acc = run_kernel<ActorAcc>(parallel, batch, grad, actor_sample);

      if (epoch == 0 && mb == 0 && acc.used > 0)
        stats.first_minibatch_ratio = acc.ratio / static_cast<double>(acc.used);

      const bool actor_ok = std::isfinite(acc.objective) && std::isfinite(acc.entropy);
      if (!actor_ok) {
        ++stats.aborted_minibatches;
      } else {
        actor_total += acc;
        for (std::size_t a = 0; a < agents.actors.size(); ++a) {
          auto g = std::span<const double>(grad).subspan(actor_offset[a],
                                                         agents.actors[a].parameter_count());
          const auto rep = nn::optimizer_step(agents.actor_opt[a], agents.actors[a].parameters(), g);
          if (!rep.applied) ++stats.skipped_steps;
        }
      }

      // ---- critic
      const std::size_t s_begin = mb * slot_order.size() / mb_count;
      const std::size_t s_end = (mb + 1) * slot_order.size() / mb_count;
      const std::size_t s_batch = s_end - s_begin;
      if (s_batch == 0) continue;
      std::vector<double> cgrad(agents.critic.parameter_count(), 0.0);
      const double c_scale = 2.0 * cfg.value_coef / static_cast<double>(s_batch);
      auto critic_sample = [&](std::size_t i, std::span<double> g) {
        const std::size_t slot = slot_order[s_begin + i];
        nn::Tape tape;
        const double v = agents.critic.forward(buffer.states[slot], tape)[0];
        const double err = v - targets[slot];
        const double up = c_scale * err;
        agents.critic.backward(tape, std::span<const double>(&up, 1), g);
        return err * err;
      };
      const double sq = run_kernel<double>(parallel, s_batch, cgrad, critic_sample);
      if (!std::isfinite(sq)) {
        ++stats.aborted_minibatches;
        continue;
      }
      value_total += sq;
      value_count += s_batch;
      const auto rep = nn::optimizer_step(agents.critic_opt, agents.critic.parameters(), cgrad);
      if (!rep.applied) ++stats.skipped_steps;
    }
  }

  if (actor_total.used > 0) {
    const double used = static_cast<double>(actor_total.used);
    stats.mean_ratio = actor_total.ratio / used;
    stats.clip_fraction = static_cast<double>(actor_total.clipped) / used;
    stats.surrogate = actor_total.objective / used;
    stats.entropy = actor_total.entropy / used;
  }
  stats.excluded_samples = actor_total.excluded;
  if (value_count > 0) stats.value_loss = value_total / static_cast<double>(value_count);
  stats.total_loss =
      total_loss(stats.surrogate, stats.value_loss, stats.entropy, cfg.value_coef, cfg.entropy_coef);
  return stats;
}

// --------------------------------------------------------------- evaluation

EvalSummary evaluate(const Agents& agents, const EnvConfig& config, int episodes,
                     std::uint64_t seed, ExecutionMode mode, bool parallel) {
  if (config.n_dispatchers != agents.env.n_dispatchers || config.n_servers != agents.env.n_servers)
    throw ConfigError("evaluation config does not match the trained network shapes");
  const MappoPolicy policy(std::make_shared<const Agents>(agents), mode);
  return evaluate_policy(policy, config, episodes, seed, parallel);
}

// ------------------------------------------------------------------ trainer

Trainer::Trainer(const EnvConfig& env, const TrainConfig& train)
    : agents_(std::make_unique<Agents>(Agents::create(env, train, train.seed))) {
  make_workers();
}

Trainer::Trainer(Agents agents, int updates_done)
    : agents_(std::make_unique<Agents>(std::move(agents))), updates_done_(updates_done) {
  agents_->check_shapes();
  make_workers();
}

void Trainer::make_workers() {
  const auto& train = agents_->train;
  const auto round = static_cast<std::uint64_t>(updates_done_);
  workers_.clear();
  for (int w = 0; w < train.workers; ++w) {
    const auto id = static_cast<std::uint64_t>(w);
    RolloutWorker worker{Environment(agents_->env), Rng(derive_seed(train.seed, 200 + id, round)),
                         derive_seed(train.seed, 100 + id, round), 0};
    worker.env.reset(derive_seed(worker.seed_base, 0, 0));
    workers_.push_back(std::move(worker));
  }
  update_rng_.seed(derive_seed(train.seed, 3, round));
}

ProgressRecord Trainer::update() {
  // fresh workers per round so a resumed run replays exactly
  make_workers();
  auto& agents = *agents_;
  RolloutBuffer buffer = collect_rollout(workers_, agents, agents.train.rollout_length);
  compute_advantages(buffer, agents.env.discount, agents.train.gae_lambda);

  ProgressRecord rec;
  rec.stats = mappo_update(buffer, agents, update_rng_);
  rec.update = ++updates_done_;
  rec.rollout_reward = std::accumulate(buffer.rewards.begin(), buffer.rewards.end(), 0.0) /
                       static_cast<double>(buffer.slots());
  const int every = agents.train.eval_interval;
  if (every > 0 && updates_done_ % every == 0) {
    rec.eval_reward = evaluate(agents, agents.env, agents.train.eval_episodes,
                               derive_seed(agents.train.seed, 5, static_cast<std::uint64_t>(updates_done_)),
                               agents.train.eval_mode)
                          .average_reward();
  }
  return rec;
}

void Trainer::run(const ProgressSink& on_progress,
                  const std::function<void(const Agents&, int)>& on_checkpoint) {
  while (updates_done_ < agents_->train.total_updates) {
    const ProgressRecord rec = update();
    if (on_progress) on_progress(rec);
    const int every = agents_->train.eval_interval;
    const bool last = updates_done_ == agents_->train.total_updates;
    if (on_checkpoint && ((every > 0 && updates_done_ % every == 0) || last))
      on_checkpoint(*agents_, updates_done_);
  }
}

}  // namespace edgeq::mappo
