#include "edgeq/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace edgeq::nn {

namespace {

double activate(Activation a, double x) {
  switch (a) {
    case Activation::Tanh: return std::tanh(x);
    case Activation::Relu: return x > 0.0 ? x : 0.0;
    case Activation::Linear: break;
  }
  return x;
}

// Derivative expressed through the activation output y.
double activate_grad(Activation a, double y) {
  switch (a) {
    case Activation::Tanh: return 1.0 - y * y;
    case Activation::Relu: return y > 0.0 ? 1.0 : 0.0;
    case Activation::Linear: break;
  }
  return 1.0;
}

double clamp_logit(double z) { return std::clamp(z, -kLogitClamp, kLogitClamp); }

// log(1 + e^x) without overflow.
double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

const char* to_string(Activation a) {
  switch (a) {
    case Activation::Tanh: return "tanh";
    case Activation::Relu: return "relu";
    case Activation::Linear: break;
  }
  return "linear";
}

Activation activation_from_string(const std::string& name) {
  if (name == "tanh") return Activation::Tanh;
  if (name == "relu") return Activation::Relu;
  if (name == "linear") return Activation::Linear;
  throw ConfigError("unknown activation '" + name + "'");
}

DenseNet::DenseNet(const std::vector<int>& sizes, Activation hidden) { build(sizes, hidden); }

DenseNet::DenseNet(const std::vector<int>& sizes, Activation hidden, Rng& rng,
                   double output_gain) {
  build(sizes, hidden);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    double gain = layer.activation == Activation::Relu ? std::sqrt(2.0) : 1.0;
    if (l + 1 == layers_.size()) gain *= output_gain;
    const double scale = gain / std::sqrt(static_cast<double>(layer.in));
    auto w = weights(l);
    for (auto& x : w) x = scale * normal(rng);
  }
}

void DenseNet::build(const std::vector<int>& sizes, Activation hidden) {
  if (sizes.size() < 2) throw ContractError("a network needs an input and an output width");
  for (int s : sizes)
    if (s < 1) throw ContractError("layer widths must be positive");
  layers_.clear();
  std::size_t offset = 0;
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    Layer layer;
    layer.in = sizes[i];
    layer.out = sizes[i + 1];
    layer.activation = i + 2 == sizes.size() ? Activation::Linear : hidden;
    layer.weight_offset = offset;
    offset += static_cast<std::size_t>(layer.in) * static_cast<std::size_t>(layer.out);
    layer.bias_offset = offset;
    offset += static_cast<std::size_t>(layer.out);
    layers_.push_back(layer);
  }
  params_.assign(offset, 0.0);
}

DenseNet DenseNet::from_layers(const std::vector<std::pair<int, int>>& shapes,
                               const std::vector<Activation>& activations,
                               std::vector<double> parameters) {
  if (shapes.empty() || shapes.size() != activations.size())
    throw ConfigError("layer shapes and activations must be nonempty and aligned");
  DenseNet net;
  std::size_t offset = 0;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    if (i > 0 && shapes[i].first != shapes[i - 1].second)
      throw ConfigError("layer shapes do not chain");
    if (shapes[i].first < 1 || shapes[i].second < 1) throw ConfigError("empty layer");
    Layer layer{shapes[i].first, shapes[i].second, activations[i], offset, 0};
    offset += static_cast<std::size_t>(layer.in) * static_cast<std::size_t>(layer.out);
    layer.bias_offset = offset;
    offset += static_cast<std::size_t>(layer.out);
    net.layers_.push_back(layer);
  }
  if (parameters.size() != offset) throw ConfigError("parameter count does not match shapes");
  net.params_ = std::move(parameters);
  return net;
}

std::span<double> DenseNet::weights(std::size_t layer) {
  const auto& l = layers_.at(layer);
  return std::span<double>(params_).subspan(
      l.weight_offset, static_cast<std::size_t>(l.in) * static_cast<std::size_t>(l.out));
}

std::span<double> DenseNet::bias(std::size_t layer) {
  const auto& l = layers_.at(layer);
  return std::span<double>(params_).subspan(l.bias_offset, static_cast<std::size_t>(l.out));
}

void DenseNet::check_input(std::span<const double> input) const {
  if (layers_.empty()) throw ContractError("forward on an empty network");
  if (static_cast<int>(input.size()) != input_size())
    throw ContractError("input width " + std::to_string(input.size()) + " != network input " +
                        std::to_string(input_size()));
}

std::vector<double> DenseNet::forward(std::span<const double> input) const {
  Tape tape;
  auto out = forward(input, tape);
  return {out.begin(), out.end()};
}

std::span<const double> DenseNet::forward(std::span<const double> input, Tape& tape) const {
  check_input(input);
  tape.outputs.resize(layers_.size() + 1);
  tape.outputs[0].assign(input.begin(), input.end());
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    const auto& x = tape.outputs[l];
    auto& y = tape.outputs[l + 1];
    y.resize(static_cast<std::size_t>(layer.out));
    const double* w = params_.data() + layer.weight_offset;
    const double* b = params_.data() + layer.bias_offset;
    for (int o = 0; o < layer.out; ++o) {
      const double* row = w + static_cast<std::size_t>(o) * static_cast<std::size_t>(layer.in);
      double acc = b[o];
      for (int i = 0; i < layer.in; ++i) acc += row[i] * x[static_cast<std::size_t>(i)];
      y[static_cast<std::size_t>(o)] = activate(layer.activation, acc);
    }
  }
  return tape.outputs.back();
}

void DenseNet::backward(const Tape& tape, std::span<const double> upstream,
                        std::span<double> grad) const {
  if (tape.outputs.size() != layers_.size() + 1)
    throw ContractError("backward called without a matching forward pass");
  if (static_cast<int>(upstream.size()) != output_size())
    throw ContractError("upstream gradient width mismatch");
  if (grad.size() != params_.size()) throw ContractError("gradient buffer size mismatch");

  std::vector<double> delta(upstream.begin(), upstream.end());
  std::vector<double> next;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const auto& layer = layers_[l];
    const auto& x = tape.outputs[l];
    const auto& y = tape.outputs[l + 1];
    for (int o = 0; o < layer.out; ++o)
      delta[static_cast<std::size_t>(o)] *= activate_grad(layer.activation, y[static_cast<std::size_t>(o)]);

    const double* w = params_.data() + layer.weight_offset;
    double* gw = grad.data() + layer.weight_offset;
    double* gb = grad.data() + layer.bias_offset;
    next.assign(static_cast<std::size_t>(layer.in), 0.0);
    const double* __restrict xi = x.data();
    double* __restrict nx = next.data();
    const std::size_t in = static_cast<std::size_t>(layer.in);
    for (int o = 0; o < layer.out; ++o) {
      const double d = delta[static_cast<std::size_t>(o)];
      gb[o] += d;
      if (d == 0.0) continue;
      // separate loops so both vectorize
      double* __restrict g = gw + static_cast<std::size_t>(o) * in;
      const double* __restrict wr = w + static_cast<std::size_t>(o) * in;
      for (std::size_t i = 0; i < in; ++i) g[i] += d * xi[i];
      for (std::size_t i = 0; i < in; ++i) nx[i] += d * wr[i];
    }
    delta.swap(next);
  }
}

std::vector<double> DenseNet::backward(const Tape& tape, std::span<const double> upstream) const {
  std::vector<double> grad(params_.size(), 0.0);
  backward(tape, upstream, grad);
  return grad;
}

// ---------------------------------------------------------------- policy heads

PolicyHeads make_heads(std::span<const double> query_logits,
                       std::span<const double> dispatch_logits) {
  if (query_logits.size() != dispatch_logits.size() || query_logits.empty())
    throw ContractError("query and dispatch heads must both cover every server");
  const std::size_t k = query_logits.size();
  PolicyHeads h;
  h.query_logits.resize(k);
  h.query_prob.resize(k);
  h.dispatch_logits.resize(k);
  h.dispatch_log_prob.resize(k);
  h.dispatch_prob.resize(k);
  for (std::size_t i = 0; i < k; ++i) {
    h.query_logits[i] = clamp_logit(query_logits[i]);
    h.query_prob[i] = sigmoid(h.query_logits[i]);
    h.dispatch_logits[i] = clamp_logit(dispatch_logits[i]);
  }
  const double max_logit = *std::max_element(h.dispatch_logits.begin(), h.dispatch_logits.end());
  double sum = 0.0;
  for (double z : h.dispatch_logits) sum += std::exp(z - max_logit);
  const double lse = max_logit + std::log(sum);
  for (std::size_t i = 0; i < k; ++i) {
    h.dispatch_log_prob[i] = h.dispatch_logits[i] - lse;
    h.dispatch_prob[i] = std::exp(h.dispatch_log_prob[i]);
  }
  return h;
}

PolicyHeads make_heads(std::span<const double> logits) {
  if (logits.size() % 2 != 0) throw ContractError("policy output must hold 2K logits");
  const std::size_t k = logits.size() / 2;
  return make_heads(logits.subspan(0, k), logits.subspan(k, k));
}

namespace {

void check_action_shape(const PolicyHeads& heads, const ActorAction& action) {
  if (action.queries.size() != heads.query_prob.size())
    throw ContractError("query pattern length does not match the head");
  if (action.dispatch && (*action.dispatch < 0 || *action.dispatch >= heads.n_servers()))
    throw ContractError("dispatch index out of range");
}

// log sigma(z) and log(1 - sigma(z)).
double log_sigmoid(double z) { return -softplus(-z); }
double log_one_minus_sigmoid(double z) { return -softplus(z); }

}  // namespace

LogProbEntropy log_prob_and_entropy(const PolicyHeads& heads, const ActorAction& action) {
  check_action_shape(heads, action);
  LogProbEntropy r;
  for (std::size_t k = 0; k < heads.query_prob.size(); ++k) {
    const double z = heads.query_logits[k];
    const double p = heads.query_prob[k];
    const double lp = action.queries[k] ? log_sigmoid(z) : log_one_minus_sigmoid(z);
    r.log_prob += std::max(lp, kLogProbFloor);
    r.entropy += p * softplus(-z) + (1.0 - p) * softplus(z);
  }
  if (action.dispatch) {
    const auto u = static_cast<std::size_t>(*action.dispatch);
    r.log_prob += std::max(heads.dispatch_log_prob[u], kLogProbFloor);
    double h = 0.0;
    for (std::size_t k = 0; k < heads.dispatch_prob.size(); ++k)
      h -= heads.dispatch_prob[k] * heads.dispatch_log_prob[k];
    r.entropy += std::max(h, 0.0);
  }
  return r;
}

void head_gradient(const PolicyHeads& heads, const ActorAction& action, double w_log_prob,
                   double w_entropy, std::span<double> d_query, std::span<double> d_dispatch) {
  check_action_shape(heads, action);
  const std::size_t k = heads.query_prob.size();
  if (d_query.size() != k || d_dispatch.size() != k)
    throw ContractError("head gradient buffers must have length K");
  std::fill(d_query.begin(), d_query.end(), 0.0);
  std::fill(d_dispatch.begin(), d_dispatch.end(), 0.0);

  for (std::size_t i = 0; i < k; ++i) {
    const double z = heads.query_logits[i];
    if (std::abs(z) >= kLogitClamp) continue;  // clamp is flat there
    const double p = heads.query_prob[i];
    const double lp = action.queries[i] ? log_sigmoid(z) : log_one_minus_sigmoid(z);
    double g = 0.0;
    if (lp > kLogProbFloor) g += w_log_prob * ((action.queries[i] ? 1.0 : 0.0) - p);
    g += w_entropy * (-z * p * (1.0 - p));
    d_query[i] = g;
  }

  if (!action.dispatch) return;
  const auto u = static_cast<std::size_t>(*action.dispatch);
  double h = 0.0;
  for (std::size_t i = 0; i < k; ++i) h -= heads.dispatch_prob[i] * heads.dispatch_log_prob[i];
  const bool floored = heads.dispatch_log_prob[u] <= kLogProbFloor;
  for (std::size_t i = 0; i < k; ++i) {
    if (std::abs(heads.dispatch_logits[i]) >= kLogitClamp) continue;
    const double p = heads.dispatch_prob[i];
    double g = 0.0;
    if (!floored) g += w_log_prob * ((i == u ? 1.0 : 0.0) - p);
    g += w_entropy * (-p * (heads.dispatch_log_prob[i] + h));
    d_dispatch[i] = g;
  }
}

ActorAction sample_action(const PolicyHeads& heads, bool arrival, Rng& rng) {
  ActorAction a;
  a.queries.resize(heads.query_prob.size());
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t k = 0; k < heads.query_prob.size(); ++k)
    a.queries[k] = unit(rng) < heads.query_prob[k] ? 1 : 0;
  if (arrival) {
    const double u = unit(rng);
    double cum = 0.0;
    int choice = heads.n_servers() - 1;
    for (std::size_t k = 0; k < heads.dispatch_prob.size(); ++k) {
      cum += heads.dispatch_prob[k];
      if (u < cum) {
        choice = static_cast<int>(k);
        break;
      }
    }
    a.dispatch = choice;
  }
  return a;
}

ActorAction greedy_action(const PolicyHeads& heads, bool arrival) {
  ActorAction a;
  a.queries.resize(heads.query_prob.size());
  for (std::size_t k = 0; k < heads.query_prob.size(); ++k)
    a.queries[k] = heads.query_prob[k] > 0.5 ? 1 : 0;
  if (arrival) {
    const auto it = std::max_element(heads.dispatch_prob.begin(), heads.dispatch_prob.end());
    a.dispatch = static_cast<int>(it - heads.dispatch_prob.begin());
  }
  return a;
}

// ------------------------------------------------------------------ optimizer

OptimizerReport optimizer_step(OptimizerState& state, std::span<double> params,
                               std::span<const double> grads) {
  if (params.size() != grads.size() || state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size())
    throw ContractError("optimizer shapes disagree");

  OptimizerReport report;
  double sq = 0.0;
  for (double g : grads) sq += g * g;
  report.grad_norm = std::sqrt(sq);
  if (!std::isfinite(report.grad_norm)) return report;

  const auto& cfg = state.config;
  double scale = 1.0;
  if (cfg.max_grad_norm > 0.0 && report.grad_norm > cfg.max_grad_norm) {
    scale = cfg.max_grad_norm / report.grad_norm;
    report.clipped = true;
  }

  ++state.steps;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.steps));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.steps));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i] * scale;
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
    params[i] -= cfg.learning_rate * (m / bc1) / (std::sqrt(v / bc2) + cfg.epsilon);
  }
  report.applied = true;
  return report;
}

}  // namespace edgeq::nn
