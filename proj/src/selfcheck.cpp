#include "edgeq/selfcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "edgeq/nn.hpp"

namespace edgeq::selfcheck {

namespace {

double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int uniform_int(Rng& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

EnvConfig random_config(Rng& rng) {
  EnvConfig c;
  c.n_dispatchers = uniform_int(rng, 1, 6);
  c.n_servers = uniform_int(rng, 1, 6);
  for (int d = 0; d < c.n_dispatchers; ++d) c.arrival_prob.push_back(uniform(rng, 0.05, 0.95));
  for (int s = 0; s < c.n_servers; ++s) {
    c.stay_available.push_back(uniform(rng, 0.05, 0.95));
    c.stay_unavailable.push_back(uniform(rng, 0.05, 0.95));
    c.queue_capacity.push_back(uniform_int(rng, 1, 5));
  }
  c.query_cost = uniform(rng, 0.0, 0.1);
  c.horizon = 1 << 30;
  c.seed = rng();
  c.overflow = uniform_int(rng, 0, 1) ? OverflowPolicy::DropOldest : OverflowPolicy::DropNewest;
  return c;
}

JointAction random_action(const WorldState& w, const EnvConfig& c, Rng& rng) {
  auto a = JointAction::idle(c.n_dispatchers, c.n_servers);
  const double p = uniform(rng, 0.0, 0.6);
  for (int d = 0; d < c.n_dispatchers; ++d) {
    auto& da = a.dispatchers[static_cast<std::size_t>(d)];
    for (auto& q : da.queries) q = uniform(rng, 0, 1) < p;
    if (w.arrivals[static_cast<std::size_t>(d)]) da.dispatch = uniform_int(rng, 0, c.n_servers - 1);
  }
  return a;
}

// Empty string when the slot is consistent.
std::string check_slot(const WorldState& before, const WorldState& after, const JointAction& a,
                       const StepOutcome& out, const EnvConfig& c) {
  const auto n = static_cast<std::size_t>(c.n_dispatchers);
  const auto k = static_cast<std::size_t>(c.n_servers);
  for (std::size_t s = 0; s < k; ++s)
    if (after.servers[s].queue.size() > static_cast<std::size_t>(c.queue_capacity[s]))
      return "queue over capacity";
  if (after.jobs_dispatched != after.jobs_completed + after.jobs_dropped + after.jobs_in_queues())
    return "job conservation broken";

  std::vector<int> served(k, 0);
  std::vector<std::uint8_t> fresh(n * k, 0);
  for (const auto& ev : out.feedback) {
    fresh[static_cast<std::size_t>(ev.dispatcher) * k + static_cast<std::size_t>(ev.server)] = 1;
    if (ev.accepted) ++served[static_cast<std::size_t>(ev.server)];
  }
  for (std::size_t s = 0; s < k; ++s) {
    if (served[s] > 1) return "server completed more than one job";
    if (served[s] && !before.servers[s].available) return "unavailable server completed a job";
    if (!served[s] && before.servers[s].available && !before.servers[s].queue.empty())
      return "available busy server idled";
  }
  for (const auto& r : out.responses) {
    const auto s = static_cast<std::size_t>(r.server);
    if (r.reported_available != before.servers[s].available ||
        r.reported_queue != static_cast<int>(before.servers[s].queue.size()))
      return "query reply is not the slot-start state";
    fresh[static_cast<std::size_t>(r.dispatcher) * k + s] = 1;
  }
  for (std::size_t d = 0; d < n; ++d) {
    for (std::size_t s = 0; s < k; ++s) {
      if (a.dispatchers[d].queries[s] && !fresh[d * k + s]) return "query without reply";
      const int prev = before.knowledge[d].servers[s].aoi;
      const int now = after.knowledge[d].servers[s].aoi;
      if (now < 1) return "aoi below 1";
      if (now != (fresh[d * k + s] ? 1 : prev + 1)) return "aoi update wrong";
    }
  }
  double team = 0;
  for (std::size_t d = 0; d < n; ++d) {
    int queries = 0;
    for (auto q : a.dispatchers[d].queries) queries += q != 0;
    const double expect = out.completions[d] - c.query_cost * queries;
    if (std::abs(out.rewards[d] - expect) > 1e-12) return "per-dispatcher reward wrong";
    team += out.rewards[d];
  }
  if (std::abs(out.team_reward - team) > 1e-12) return "team reward is not the sum";
  return {};
}

// Stationary vector of a row-stochastic matrix by Gaussian elimination.
std::vector<double> stationary(const std::vector<std::vector<double>>& p) {
  const std::size_t s = p.size();
  std::vector<std::vector<double>> a(s, std::vector<double>(s + 1, 0.0));
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t j = 0; j < s; ++j) a[i][j] = p[j][i] - (i == j ? 1.0 : 0.0);
  for (std::size_t j = 0; j < s; ++j) a[s - 1][j] = 1.0;
  a[s - 1][s] = 1.0;
  for (std::size_t col = 0; col < s; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < s; ++r)
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    std::swap(a[col], a[piv]);
    for (std::size_t r = 0; r < s; ++r) {
      if (r == col) continue;
      const double f = a[r][col] / a[col][col];
      for (std::size_t j = col; j <= s; ++j) a[r][j] -= f * a[col][j];
    }
  }
  std::vector<double> pi(s);
  for (std::size_t i = 0; i < s; ++i) pi[i] = a[i][s] / a[i][i];
  return pi;
}

}  // namespace

CheckResult invariant_suite(const InvariantOptions& options) {
  Rng rng(options.seed);
  const std::int64_t per_config = std::max<std::int64_t>(1, options.total_steps / options.configs);
  std::int64_t steps = 0;
  for (int i = 0; i < options.configs; ++i) {
    const EnvConfig c = random_config(rng);
    Rng env_rng(c.seed);
    WorldState w = init_world(c, env_rng);
    std::vector<JointAction> actions;
    std::vector<StepOutcome> outcomes;
    for (std::int64_t t = 0; t < per_config; ++t, ++steps) {
      const WorldState before = w;
      auto a = random_action(w, c, rng);
      auto out = step(w, a, c, env_rng);
      if (auto err = check_slot(before, w, a, out, c); !err.empty()) {
        std::ostringstream os;
        os << err << " (config " << i << ", slot " << t << ")";
        return {"invariants", false, os.str()};
      }
      actions.push_back(std::move(a));
      outcomes.push_back(std::move(out));
    }
    // same seed and actions must reproduce the trajectory
    Rng replay_rng(c.seed);
    WorldState r = init_world(c, replay_rng);
    for (std::size_t t = 0; t < actions.size(); ++t) {
      if (!(step(r, actions[t], c, replay_rng) == outcomes[t])) {
        std::ostringstream os;
        os << "replay diverged (config " << i << ", slot " << t << ")";
        return {"invariants", false, os.str()};
      }
    }
    if (!(r == w)) return {"invariants", false, "replay final state differs"};
  }
  std::ostringstream os;
  os << steps << " slots over " << options.configs << " configurations";
  return {"invariants", true, os.str()};
}

double exact_single_server_throughput(double arrival, double stay_available,
                                      double stay_unavailable, int capacity) {
  // State index: x * (Q + 1) + q, x = 0 available, 1 unavailable.
  const int q_states = capacity + 1;
  const std::size_t s = 2 * static_cast<std::size_t>(q_states);
  std::vector<std::vector<double>> p(s, std::vector<double>(s, 0.0));
  double throughput_weight[2][64] = {};
  for (int x = 0; x < 2; ++x) {
    const double to_avail = x == 0 ? stay_available : 1.0 - stay_unavailable;
    for (int q = 0; q < q_states; ++q) {
      for (int z = 0; z < 2; ++z) {
        const double pz = z ? arrival : 1.0 - arrival;
        int q1 = std::min(q + z, capacity);
        if (x == 0 && q1 > 0) {
          --q1;
          throughput_weight[x][q] += pz;
        }
        const auto from = static_cast<std::size_t>(x * q_states + q);
        p[from][static_cast<std::size_t>(q1)] += pz * to_avail;
        p[from][static_cast<std::size_t>(q_states + q1)] += pz * (1.0 - to_avail);
      }
    }
  }
  const auto pi = stationary(p);
  double tp = 0;
  for (int x = 0; x < 2; ++x)
    for (int q = 0; q < q_states; ++q)
      tp += pi[static_cast<std::size_t>(x * q_states + q)] * throughput_weight[x][q];
  return tp;
}

OracleReport markov_oracle(const OracleOptions& o) {
  if (o.capacity < 1 || o.capacity > 63) throw ConfigError("oracle capacity must be in [1,63]");
  EnvConfig c = EnvConfig::homogeneous(1, 1, o.arrival, o.stay_available, o.stay_unavailable,
                                       o.capacity, 0.0);
  c.horizon = static_cast<int>(std::min<std::int64_t>(o.slots, 1 << 30));
  c.seed = o.seed;
  c.validate();

  Rng rng(o.seed);
  WorldState w = init_world(c, rng);
  const std::int64_t per_batch = o.slots / o.batches;
  std::vector<double> batch_rate;
  double total = 0;
  auto a = JointAction::idle(1, 1);
  for (int b = 0; b < o.batches; ++b) {
    std::int64_t acks = 0;
    for (std::int64_t t = 0; t < per_batch; ++t) {
      a.dispatchers[0].dispatch = w.arrivals[0] ? std::optional<int>(0) : std::nullopt;
      acks += step(w, a, c, rng).completions[0];
    }
    batch_rate.push_back(static_cast<double>(acks) / static_cast<double>(per_batch));
    total += static_cast<double>(acks);
  }
  OracleReport r;
  r.exact = exact_single_server_throughput(o.arrival, o.stay_available, o.stay_unavailable,
                                           o.capacity);
  r.simulated = total / static_cast<double>(per_batch * o.batches);
  double ss = 0;
  for (double x : batch_rate) ss += (x - r.simulated) * (x - r.simulated);
  const double nb = static_cast<double>(o.batches);
  r.standard_error = std::sqrt(ss / (nb - 1) / nb);
  r.passed = std::abs(r.simulated - r.exact) <= o.z * r.standard_error;
  return r;
}

GradientReport gradient_check(int networks, std::uint64_t seed) {
  Rng rng(seed);
  GradientReport rep;
  constexpr double h = 1e-5;
  const auto rel = [](double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
  };
  for (int i = 0; i < networks; ++i) {
    const int k = uniform_int(rng, 2, 4);
    const int in = uniform_int(rng, 2, 6);
    std::vector<int> sizes{in};
    for (int l = uniform_int(rng, 1, 2); l > 0; --l) sizes.push_back(uniform_int(rng, 3, 8));
    const bool critic = i % 4 == 3;
    sizes.push_back(critic ? 1 : 2 * k);
    const auto act = i % 5 == 4 ? nn::Activation::Linear : nn::Activation::Tanh;
    nn::DenseNet net(sizes, act, rng, 1.0);

    std::vector<double> x(static_cast<std::size_t>(in));
    for (auto& v : x) v = uniform(rng, -1, 1);
    const double w_lp = uniform(rng, -1, 1);
    const double w_ent = uniform(rng, -0.5, 0.5);
    const double target = uniform(rng, -1, 1);
    nn::ActorAction action;
    action.queries.resize(static_cast<std::size_t>(k));
    for (auto& q : action.queries) q = uniform_int(rng, 0, 1);
    if (uniform_int(rng, 0, 3)) action.dispatch = uniform_int(rng, 0, k - 1);

    const auto loss = [&](const nn::DenseNet& n) {
      const auto out = n.forward(x);
      if (critic) return (out[0] - target) * (out[0] - target);
      const auto heads = nn::make_heads(out);
      const auto le = nn::log_prob_and_entropy(heads, action);
      return w_lp * le.log_prob + w_ent * le.entropy;
    };

    nn::Tape tape;
    const auto out = net.forward(x, tape);
    std::vector<double> upstream(out.size());
    if (critic) {
      upstream[0] = 2.0 * (out[0] - target);
    } else {
      const auto heads = nn::make_heads(std::vector<double>(out.begin(), out.end()));
      const auto uk = static_cast<std::size_t>(k);
      nn::head_gradient(heads, action, w_lp, w_ent, std::span(upstream).first(uk),
                        std::span(upstream).subspan(uk));
    }
    std::vector<double> grad(net.parameter_count(), 0.0);
    net.backward(tape, upstream, grad);

    nn::DenseNet probe = net;
    auto params = probe.parameters();
    for (std::size_t j = 0; j < params.size(); ++j) {
      const double keep = params[j];
      params[j] = keep + h;
      const double up = loss(probe);
      params[j] = keep - h;
      const double down = loss(probe);
      params[j] = keep;
      rep.max_relative_error = std::max(rep.max_relative_error, rel(grad[j], (up - down) / (2 * h)));
      ++rep.parameters_checked;
    }
  }
  rep.passed = rep.max_relative_error < 1e-4;
  return rep;
}

std::vector<CheckResult> run_all() {
  std::vector<CheckResult> out;
  out.push_back(invariant_suite());
  {
    const auto r = markov_oracle();
    std::ostringstream os;
    os << "exact " << r.exact << ", simulated " << r.simulated << " (se " << r.standard_error << ")";
    out.push_back({"markov-oracle", r.passed, os.str()});
  }
  {
    const auto r = gradient_check();
    std::ostringstream os;
    os << r.parameters_checked << " parameters, max relative error " << r.max_relative_error;
    out.push_back({"gradient-check", r.passed, os.str()});
  }
  return out;
}

}  // namespace edgeq::selfcheck
