#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "edgeq/nn.hpp"
#include "edgeq/parallel.hpp"
#include "edgeq/selfcheck.hpp"

using namespace edgeq;
using namespace edgeq::nn;

namespace {

// plain triple loop, written separately from DenseNet::forward
std::vector<double> reference_forward(const DenseNet& net, std::vector<double> x) {
  auto p = net.parameters();
  std::size_t off = 0;
  for (const auto& l : net.layers()) {
    std::vector<double> y(static_cast<std::size_t>(l.out));
    for (int o = 0; o < l.out; ++o) {
      double s = p[off + static_cast<std::size_t>(l.out * l.in) + static_cast<std::size_t>(o)];
      for (int i = 0; i < l.in; ++i) s += p[off + static_cast<std::size_t>(o * l.in + i)] * x[i];
      if (l.activation == Activation::Tanh) s = std::tanh(s);
      if (l.activation == Activation::Relu) s = std::max(0.0, s);
      y[o] = s;
    }
    off += static_cast<std::size_t>(l.out * l.in + l.out);
    x = std::move(y);
  }
  return x;
}

}  // namespace

TEST_CASE("forward") {
  SUBCASE("zero weights give the biases") {
    DenseNet net({3, 2}, Activation::Tanh);
    net.bias(0)[0] = 0.25;
    net.bias(0)[1] = -1.5;
    const auto y = net.forward(std::vector<double>{1, 2, 3});
    CHECK(y == std::vector<double>{0.25, -1.5});
  }
  SUBCASE("identity layer") {
    DenseNet net({3, 3}, Activation::Tanh);
    auto w = net.weights(0);
    for (int i = 0; i < 3; ++i) w[static_cast<std::size_t>(i * 3 + i)] = 1.0;
    const std::vector<double> x{0.5, -2, 7};
    CHECK(net.forward(x) == x);
  }
  SUBCASE("matches an independent implementation") {
    Rng rng(4);
    DenseNet net({4, 7, 5, 3}, Activation::Tanh, rng, 1.0);
    const std::vector<double> x{0.1, -0.4, 0.9, 2.0};
    const auto a = net.forward(x);
    const auto b = reference_forward(net, x);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-14));

    DenseNet relu({4, 6, 2}, Activation::Relu, rng, 1.0);
    const auto c = relu.forward(x);
    const auto d = reference_forward(relu, x);
    for (std::size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(d[i]).epsilon(1e-14));
  }
  SUBCASE("shape errors") {
    DenseNet net({3, 2}, Activation::Tanh);
    CHECK_THROWS_AS(net.forward(std::vector<double>{1, 2}), ContractError);
    Tape empty;
    std::vector<double> g(net.parameter_count());
    CHECK_THROWS_AS(net.backward(empty, std::vector<double>{1, 1}, g), ContractError);
  }
}

TEST_CASE("backward") {
  SUBCASE("linear squared loss") {
    // y = w.x + b, L = (y - t)^2: dL/dw = 2 (y - t) x, dL/db = 2 (y - t)
    DenseNet net({3, 1}, Activation::Linear);
    auto w = net.weights(0);
    w[0] = 0.5;
    w[1] = -1.0;
    w[2] = 2.0;
    net.bias(0)[0] = 0.1;
    const std::vector<double> x{1.0, 2.0, 3.0};
    const double t = 1.0;
    Tape tape;
    const double y = net.forward(x, tape)[0];
    CHECK(y == doctest::Approx(4.6));
    const auto g = net.backward(tape, std::vector<double>{2 * (y - t)});
    CHECK(g[0] == doctest::Approx(7.2));
    CHECK(g[1] == doctest::Approx(14.4));
    CHECK(g[2] == doctest::Approx(21.6));
    CHECK(g[3] == doctest::Approx(7.2));
  }
  SUBCASE("zero upstream") {
    Rng rng(8);
    DenseNet net({3, 5, 2}, Activation::Tanh, rng, 1.0);
    Tape tape;
    net.forward(std::vector<double>{1, 2, 3}, tape);
    const auto g = net.backward(tape, std::vector<double>{0, 0});
    CHECK(std::all_of(g.begin(), g.end(), [](double v) { return v == 0.0; }));
  }
  SUBCASE("finite differences") {
    const auto r = selfcheck::gradient_check(20, 3);
    CHECK(r.parameters_checked > 500);
    CHECK(r.max_relative_error < 1e-4);
  }
}

TEST_CASE("policy heads") {
  const std::vector<double> zeros(10, 0.0);
  const auto h = make_heads(zeros);
  CHECK(h.n_servers() == 5);

  ActorAction a{{1, 0, 1, 1, 0}, 2};
  const auto le = log_prob_and_entropy(h, a);
  CHECK(le.log_prob == doctest::Approx(5 * std::log(0.5) + std::log(0.2)));
  CHECK(le.entropy == doctest::Approx(5 * std::log(2.0) + std::log(5.0)));

  // without a dispatch only the query heads count
  const auto q_only = log_prob_and_entropy(h, ActorAction{{0, 0, 0, 0, 0}, std::nullopt});
  CHECK(q_only.log_prob == doctest::Approx(5 * std::log(0.5)));
  CHECK(q_only.entropy == doctest::Approx(5 * std::log(2.0)));

  // near-deterministic heads
  const std::vector<double> sharp{50, 50, -50, -50, 50, -50};
  const auto d = make_heads(sharp);
  const auto de = log_prob_and_entropy(d, ActorAction{{1, 1, 0}, 1});
  CHECK(de.entropy < 1e-10);
  CHECK(std::isfinite(de.log_prob));
  CHECK(greedy_action(d, true) == ActorAction{{1, 1, 0}, 1});
  CHECK(de.log_prob > -1e-10);
  CHECK(!greedy_action(d, false).dispatch);
  // impossible action: floored, not -inf
  const auto bad = log_prob_and_entropy(d, ActorAction{{0, 0, 1}, 2});
  CHECK(std::isfinite(bad.log_prob));
}

TEST_CASE("sampling frequencies follow the heads") {
  const std::vector<double> logits{0.0, std::log(3.0), 0.0, std::log(3.0)};  // p_q = 0.5, 0.75
  const auto h = make_heads(logits);
  Rng rng(12);
  int q0 = 0, q1 = 0, d1 = 0;
  const int n = 50000;
  for (int i = 0; i < n; ++i) {
    const auto a = sample_action(h, true, rng);
    q0 += a.queries[0];
    q1 += a.queries[1];
    d1 += *a.dispatch == 1;
  }
  CHECK(q0 / double(n) == doctest::Approx(0.5).epsilon(0.03));
  CHECK(q1 / double(n) == doctest::Approx(0.75).epsilon(0.03));
  CHECK(d1 / double(n) == doctest::Approx(0.75).epsilon(0.03));
}

TEST_CASE("adam") {
  SUBCASE("zero gradient leaves parameters") {
    OptimizerState s(AdamConfig{}, 3);
    std::vector<double> p{1, 2, 3};
    optimizer_step(s, p, std::vector<double>{0, 0, 0});
    CHECK(p == std::vector<double>{1, 2, 3});
  }
  SUBCASE("descends against the gradient sign") {
    OptimizerState s(AdamConfig{}, 2);
    std::vector<double> p{0, 0};
    for (int i = 0; i < 100; ++i) optimizer_step(s, p, std::vector<double>{1.0, -1.0});
    CHECK(p[0] < 0);
    CHECK(p[1] > 0);
  }
  SUBCASE("1-D quadratic") {
    // f(x) = (x - 3)^2, minimizer 3
    AdamConfig cfg;
    cfg.learning_rate = 0.05;
    cfg.max_grad_norm = 0;
    OptimizerState s(cfg, 1);
    std::vector<double> x{-2.0};
    for (int i = 0; i < 5000; ++i) optimizer_step(s, x, std::vector<double>{2 * (x[0] - 3)});
    CHECK(std::abs(x[0] - 3.0) < 1e-3);
  }
  SUBCASE("global norm clipping") {
    AdamConfig cfg;
    cfg.max_grad_norm = 1.0;
    OptimizerState s(cfg, 2);
    std::vector<double> p{0, 0};
    const auto r = optimizer_step(s, p, std::vector<double>{30, 40});
    CHECK(r.clipped);
    CHECK(r.grad_norm == doctest::Approx(50));
  }
  SUBCASE("non-finite gradient is skipped") {
    OptimizerState s(AdamConfig{}, 2);
    std::vector<double> p{1, 1};
    const auto r = optimizer_step(s, p, std::vector<double>{NAN, 1});
    CHECK(!r.applied);
    CHECK(p == std::vector<double>{1, 1});
    CHECK(s.steps == 0);
  }
}

TEST_CASE("parallel gradient sum matches serial") {
  Rng rng(21);
  DenseNet net({6, 16, 4}, Activation::Tanh, rng, 1.0);
  std::vector<std::vector<double>> xs(333, std::vector<double>(6));
  for (auto& x : xs)
    for (auto& v : x) v = std::uniform_real_distribution<double>(-1, 1)(rng);
  const auto fn = [&](std::size_t i, std::span<double> g) {
    Tape tape;
    const auto y = net.forward(xs[i], tape);
    std::vector<double> up(y.begin(), y.end());
    net.backward(tape, up, g);
    return 0.5 * std::inner_product(up.begin(), up.end(), up.begin(), 0.0);
  };
  std::vector<double> gs(net.parameter_count(), 0.0), gp(net.parameter_count(), 0.0);
  const double ls = par::sum_gradients_serial<double>(xs.size(), gs, fn);
  const double lp = par::sum_gradients_parallel<double>(xs.size(), gp, fn);
  CHECK(std::abs(ls - lp) < 1e-12 * std::max(1.0, std::abs(ls)));
  for (std::size_t j = 0; j < gs.size(); ++j) CHECK(std::abs(gs[j] - gp[j]) < 1e-12);

  const auto sq = [](std::size_t i) { return static_cast<double>(i * i); };
  CHECK(par::map_serial<double>(100, sq) == par::map_parallel<double>(100, sq));

  const auto boom = [](std::size_t i, std::span<double>) -> double {
    if (i == 40) throw std::runtime_error("boom");
    return 0.0;
  };
  CHECK_THROWS_AS(par::sum_gradients_parallel<double>(100, gp, boom), std::runtime_error);
}
