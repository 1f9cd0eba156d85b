#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "edgeq/baselines.hpp"
#include "edgeq/mappo.hpp"

using namespace edgeq;
using namespace edgeq::mappo;

namespace {

EnvConfig tiny_env() {
  auto c = EnvConfig::homogeneous(2, 3, 0.6, 0.8, 0.6, 2, 0.01);
  c.horizon = 40;
  c.seed = 3;
  return c;
}

TrainConfig tiny_train() {
  TrainConfig t;
  t.rollout_length = 32;
  t.hidden_units = 16;
  t.epochs_per_update = 2;
  t.minibatch_count = 2;
  t.total_updates = 3;
  t.eval_interval = 0;
  t.seed = 5;
  return t;
}

RolloutWorker worker(const EnvConfig& env, std::uint64_t seed) {
  RolloutWorker w{Environment(env), Rng(seed), seed, 0};
  w.env.reset(derive_seed(seed, 0, 0));
  return w;
}

}  // namespace

TEST_CASE("train config validation") {
  TrainConfig t;
  CHECK_NOTHROW(t.validate());
  t.clip_epsilon = 0;
  CHECK_THROWS_AS(t.validate(), ConfigError);
  t = {};
  t.value_coef = 0;
  CHECK_THROWS_AS(t.validate(), ConfigError);
  t = {};
  t.entropy_coef = 0;
  CHECK_THROWS_AS(t.validate(), ConfigError);
  t = {};
  t.gae_lambda = 1.5;
  CHECK_THROWS_AS(t.validate(), ConfigError);
}

TEST_CASE("encodings") {
  const auto env = tiny_env();
  Environment e(env);
  CHECK(encode_observation(e.observe(0), env).size() == 9);
  CHECK(observation_width(env) == 9);
  CHECK(encode_state(e.world(), env).size() == static_cast<std::size_t>(2 * 3 + 2 * 3));
  CHECK(state_width(env) == 12);

  auto a = Agents::create(env, tiny_train(), 1);
  CHECK(a.actor_input_width() == 11);
  CHECK(a.actors.size() == 1);
  const auto in = a.actor_input(e.observe(1), 1);
  CHECK(in[9] == 0.0);
  CHECK(in[10] == 1.0);

  auto t = tiny_train();
  t.parameter_sharing = false;
  auto b = Agents::create(env, t, 1);
  CHECK(b.actors.size() == 2);
  CHECK(b.actor_input_width() == 9);

  a.env.n_servers = 4;
  CHECK_THROWS_AS(a.check_shapes(), ContractError);
}

TEST_CASE("running mean and std") {
  RunningMeanStd r;
  const std::vector<double> xs{1, 2, 3, 4, 5, 6, 7, 8};
  r.update(xs);
  CHECK(r.mean == doctest::Approx(4.5).epsilon(1e-4));
  CHECK(r.var == doctest::Approx(5.25).epsilon(1e-4));
  CHECK(r.denormalize(r.normalize(3.3)) == doctest::Approx(3.3));
}

TEST_CASE("rollout collection") {
  const auto env = tiny_env();
  const auto agents = Agents::create(env, tiny_train(), 2);
  auto w = worker(env, 9);
  const auto buf = collect_rollout(w, agents, 50);
  CHECK(buf.slots() == 50);
  CHECK(buf.actors.size() == 100);
  CHECK(buf.states.size() == 50);
  CHECK(buf.values.size() == 50);
  CHECK(buf.next_values.size() == 50);
  CHECK(buf.boundary.back() == 1);
  CHECK(buf.boundary[39] == 1);  // horizon 40 truncates and resets
  CHECK(std::count(buf.boundary.begin(), buf.boundary.end(), 1) == 2);

  // unchanged actors reproduce the behaviour log-probs exactly
  for (const auto& r : buf.actors) {
    const auto heads = actor_heads(agents, r.agent, r.obs, r.dispatch_obs);
    CHECK(nn::log_prob_and_entropy(heads, r.action).log_prob == r.log_prob);
  }

  auto w2 = worker(env, 9);
  const auto again = collect_rollout(w2, agents, 50);
  CHECK(again.rewards == buf.rewards);
  CHECK(again.states == buf.states);
  CHECK(again.values == buf.values);

  std::vector<RolloutWorker> ws{worker(env, 1), worker(env, 2)};
  std::vector<RolloutWorker> ws2{worker(env, 1), worker(env, 2)};
  const auto par = collect_rollout(ws, agents, 20, true);
  const auto ser = collect_rollout(ws2, agents, 20, false);
  CHECK(par.slots() == 40);
  CHECK(par.rewards == ser.rewards);
  CHECK(par.actors.size() == 80);
  CHECK(par.actors[40].slot == 20);
}

TEST_CASE("gae") {
  SUBCASE("zeros") {
    const std::vector<double> r(4, 0.0), v(5, 0.0);
    const auto g = compute_gae(r, v, 0.99, 0.95);
    CHECK(g.advantages == std::vector<double>(4, 0.0));
  }
  SUBCASE("lambda 1 gives discounted returns") {
    const std::vector<double> r{1, 1, 1}, v(4, 0.0);
    const auto g = compute_gae(r, v, 0.9, 1.0);
    CHECK(g.returns[0] == doctest::Approx(2.71));
    CHECK(g.returns[1] == doctest::Approx(1.9));
    CHECK(g.returns[2] == doctest::Approx(1.0));
  }
  SUBCASE("lambda 0 is the one-step TD error") {
    const std::vector<double> r{0.5, -1, 2}, v{0.3, 0.1, -0.2, 0.7};
    const auto g = compute_gae(r, v, 0.9, 0.0);
    for (std::size_t t = 0; t < 3; ++t) {
      CHECK(g.advantages[t] == doctest::Approx(r[t] + 0.9 * v[t + 1] - v[t]).epsilon(1e-15));
      CHECK(g.returns[t] == doctest::Approx(g.advantages[t] + v[t]).epsilon(1e-15));
    }
  }
  SUBCASE("missing bootstrap") {
    const std::vector<double> r{1, 1}, v{0, 0};
    CHECK_THROWS_AS(compute_gae(r, v, 0.9, 0.9), ContractError);
  }
  SUBCASE("segments do not leak across a boundary") {
    const std::vector<double> r{1, 1, 1, 1}, v{0, 0, 0, 0}, nv{0, 5, 0, 0};
    const Bits b{0, 1, 0, 1};
    const auto g = compute_gae(r, v, nv, b, 0.9, 1.0);
    CHECK(g.returns[1] == doctest::Approx(1 + 0.9 * 5));
    CHECK(g.returns[0] == doctest::Approx(1 + 0.9 * (1 + 0.9 * 5)));
    CHECK(g.returns[2] == doctest::Approx(1.9));
    const Bits open{0, 0, 0, 0};
    CHECK_THROWS_AS(compute_gae(r, v, nv, open, 0.9, 1.0), ContractError);
  }
}

TEST_CASE("advantage normalization") {
  std::vector<double> a{1, 4, -2, 9, 3};
  normalize_advantages(a);
  double m = 0, s = 0;
  for (double x : a) m += x;
  m /= 5;
  for (double x : a) s += (x - m) * (x - m);
  CHECK(std::abs(m) < 1e-6);
  CHECK(std::sqrt(s / 5) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("clipped surrogate") {
  const auto one = [](double ratio, double adv) {
    const std::vector<double> nl{std::log(ratio)}, ol{0.0}, a{adv};
    return clipped_surrogate(nl, ol, a, 0.2);
  };
  SUBCASE("identity ratio") {
    const std::vector<double> lp{-1, -2, -0.5}, a{1, -3, 0.5};
    const auto s = clipped_surrogate(lp, lp, a, 0.2);
    CHECK(s.mean_ratio == 1.0);
    CHECK(s.objective == doctest::Approx(-0.5));
    CHECK(s.clip_fraction == 0.0);
  }
  CHECK(one(1.5, 1.0).objective == doctest::Approx(1.2));
  // min(0.5 * -1, 0.8 * -1) picks the clipped value
  CHECK(one(0.5, -1.0).objective == doctest::Approx(-0.8));
  CHECK(one(0.5, 1.0).objective == doctest::Approx(0.5));
  SUBCASE("non-finite samples are excluded") {
    const std::vector<double> nl{0.0, NAN}, ol{0.0, 0.0}, a{2.0, 1.0};
    const auto s = clipped_surrogate(nl, ol, a, 0.2);
    CHECK(s.excluded == 1);
    CHECK(s.objective == doctest::Approx(2.0));
  }
}

TEST_CASE("value and total loss") {
  const std::vector<double> v{0, 0}, t{1, 3}, t2{2, 6};
  CHECK(value_loss(t, t) == 0.0);
  CHECK(value_loss(v, t) == doctest::Approx(5.0));
  CHECK(value_loss(v, t2) == doctest::Approx(4 * value_loss(v, t)));
  CHECK(total_loss(1, 0, 0, 0.5, 0.01) == doctest::Approx(-1));
  CHECK(total_loss(0.5, 0.2, 0.1, 0.5, 0.01) == doctest::Approx(-0.401));
  CHECK(total_loss(0.5, 0.2, 0.1, 0.5, 0.02) < total_loss(0.5, 0.2, 0.1, 0.5, 0.01));
}

TEST_CASE("update") {
  const auto env = tiny_env();
  auto agents = Agents::create(env, tiny_train(), 2);
  auto w = worker(env, 4);
  auto buf = collect_rollout(w, agents, 64);
  CHECK_THROWS_AS(mappo_update(buf, agents, w.rng), ContractError);
  compute_advantages(buf, env.discount, 0.95);
  Rng rng(1);
  const auto before = agents.actors[0];
  const auto s = mappo_update(buf, agents, rng);
  CHECK(std::abs(s.first_minibatch_ratio - 1.0) < 1e-6);
  CHECK(s.clip_fraction >= 0.0);
  CHECK(s.clip_fraction <= 1.0);
  CHECK(s.minibatches == 4);
  CHECK(s.aborted_minibatches == 0);
  CHECK(!(agents.actors[0] == before));

  SUBCASE("parallel and serial kernels agree") {
    auto a1 = Agents::create(env, tiny_train(), 2);
    auto a2 = a1;
    auto b1 = buf, b2 = buf;
    Rng r1(3), r2(3);
    mappo_update(b1, a1, r1, true);
    mappo_update(b2, a2, r2, false);
    const auto p1 = a1.actors[0].parameters(), p2 = a2.actors[0].parameters();
    double worst = 0;
    for (std::size_t i = 0; i < p1.size(); ++i) worst = std::max(worst, std::abs(p1[i] - p2[i]));
    CHECK(worst < 1e-12);
  }
}

TEST_CASE("policy gradient sign on a bandit") {
  // one dispatcher that always has a job; every stored action dispatches to
  // server 0 with positive advantage
  auto env = EnvConfig::homogeneous(1, 2, 1.0, 0.8, 0.6, 2, 0.0);
  env.horizon = 100;
  auto train = tiny_train();
  train.normalize_advantages = false;
  train.epochs_per_update = 1;
  train.minibatch_count = 1;
  auto agents = Agents::create(env, train, 4);
  auto w = worker(env, 1);
  auto buf = collect_rollout(w, agents, 32);
  for (auto& r : buf.actors) {
    r.action = nn::ActorAction{{0, 0}, 0};
    r.log_prob = nn::log_prob_and_entropy(actor_heads(agents, r.agent, r.obs, r.dispatch_obs),
                                          r.action)
                     .log_prob;
  }
  buf.advantages.assign(buf.slots(), 1.0);
  buf.returns = buf.values;
  const auto p0 = [&](const Agents& a) {
    const auto& r = buf.actors.front();
    return actor_heads(a, r.agent, r.obs, r.dispatch_obs).dispatch_prob[0];
  };
  const double before = p0(agents);
  Rng rng(2);
  mappo_update(buf, agents, rng);
  CHECK(p0(agents) > before);
}

TEST_CASE("evaluation") {
  const auto env = tiny_env();
  const auto agents = Agents::create(env, tiny_train(), 2);
  const auto g1 = evaluate(agents, env, 2, 7, ExecutionMode::Greedy);
  const auto g2 = evaluate(agents, env, 2, 7, ExecutionMode::Greedy);
  CHECK(g1.episodes == g2.episodes);

  SUBCASE("an actor that never queries is unaffected by the query cost") {
    auto mute = agents;
    auto b = mute.actors[0].bias(mute.actors[0].layers().size() - 1);
    for (int k = 0; k < env.n_servers; ++k) b[static_cast<std::size_t>(k)] = -1e3;
    auto cheap = env, dear = env;
    cheap.query_cost = 0.0;
    dear.query_cost = 0.1;
    const auto r1 = evaluate(mute, cheap, 2, 7, ExecutionMode::Sampled);
    const auto r2 = evaluate(mute, dear, 2, 7, ExecutionMode::Sampled);
    CHECK(r1.totals.queries == 0);
    CHECK(r1.average_reward() == r2.average_reward());
  }
  SUBCASE("no arrivals: reward is minus the query spend") {
    auto idle = EnvConfig::homogeneous(1, 1, 0.0, 0.8, 0.6, 1, 0.05);
    idle.horizon = 200;
    const auto a = Agents::create(idle, tiny_train(), 3);
    const auto s = evaluate(a, idle, 2, 1, ExecutionMode::Sampled);
    CHECK(s.totals.acks == 0);
    CHECK(s.average_reward() == doctest::Approx(-0.05 * s.queries_per_slot()).epsilon(1e-12));
    CHECK(s.queries_per_slot() == doctest::Approx(0.5).epsilon(0.15));
  }
  CHECK_THROWS_AS(evaluate(agents, EnvConfig::homogeneous(3, 3, 0.5, 0.8, 0.6, 2), 1, 1,
                           ExecutionMode::Greedy),
                  ConfigError);
}

TEST_CASE("two-phase dispatch sees the query answers") {
  auto env = tiny_env();
  auto t = tiny_train();
  t.two_phase = true;
  const auto agents = Agents::create(env, t, 2);
  auto w = worker(env, 4);
  const auto buf = collect_rollout(w, agents, 30);
  bool any = false;
  for (const auto& r : buf.actors) {
    if (!r.action.dispatch) continue;
    CHECK(!r.dispatch_obs.empty());
    any = true;
    const auto heads = actor_heads(agents, r.agent, r.obs, r.dispatch_obs);
    CHECK(nn::log_prob_and_entropy(heads, r.action).log_prob == r.log_prob);
  }
  CHECK(any);
}

TEST_CASE("trainer, checkpoints and resume") {
  const auto env = tiny_env();
  auto t = tiny_train();
  t.total_updates = 4;
  t.eval_interval = 2;
  const auto dir = std::filesystem::temp_directory_path() / "edgeq_test_ckpt";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "c.json").string();

  Trainer straight(env, t);
  std::vector<ProgressRecord> log;
  int saved = 0;
  straight.run([&](const ProgressRecord& r) { log.push_back(r); },
               [&](const Agents& a, int done) {
                 ++saved;
                 if (done == 2) save_checkpoint(a, done, path);
               });
  CHECK(log.size() == 4);
  CHECK(saved == 2);
  CHECK(log[1].eval_reward.has_value());
  CHECK(!log[0].eval_reward.has_value());

  auto cp = load_checkpoint(path);
  CHECK(cp.updates_done == 2);
  CHECK(cp.agents.env.n_servers == 3);
  CHECK(cp.agents.train == t);
  Trainer resumed(std::move(cp.agents), cp.updates_done);
  resumed.run();
  CHECK(resumed.updates_done() == 4);
  CHECK(resumed.agents().actors == straight.agents().actors);
  CHECK(resumed.agents().critic == straight.agents().critic);
  CHECK(resumed.agents().value_norm == straight.agents().value_norm);

  save_checkpoint(straight.agents(), 4, path);
  const auto back = load_checkpoint(path);
  CHECK(back.agents.actors == straight.agents().actors);
  CHECK(back.agents.actor_opt == straight.agents().actor_opt);
  CHECK(back.agents.critic_opt == straight.agents().critic_opt);

  {
    std::ofstream bad(dir / "bad.json");
    bad << "{\"format\":\"something\"}";
  }
  CHECK_THROWS_AS(load_checkpoint((dir / "bad.json").string()), ConfigError);
  CHECK_THROWS_AS(load_checkpoint((dir / "missing.json").string()), ConfigError);
  std::filesystem::remove_all(dir);
}
