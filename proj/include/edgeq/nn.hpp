#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "edgeq/env.hpp"

namespace edgeq::nn {

enum class Activation { Linear, Tanh, Relu };

const char* to_string(Activation a);
Activation activation_from_string(const std::string& name);

/// Cached activations of one forward pass; consumed by DenseNet::backward.
struct Tape {
  // outputs[0] is the input, outputs[i] the post-activation output of layer i-1.
  std::vector<std::vector<double>> outputs;

  bool empty() const { return outputs.empty(); }
  void clear() { outputs.clear(); }
};

/// Fully connected network with all parameters in one contiguous vector.
/// Weights are row-major (out x in) per layer, followed by that layer's bias.
class DenseNet {
 public:
  struct Layer {
    int in = 0;
    int out = 0;
    Activation activation = Activation::Linear;
    std::size_t weight_offset = 0;
    std::size_t bias_offset = 0;

    friend bool operator==(const Layer&, const Layer&) = default;
  };

  DenseNet() = default;

  /// Zero-initialized network. `sizes` lists input width then each layer width;
  /// hidden layers use `hidden`, the last layer is linear.
  DenseNet(const std::vector<int>& sizes, Activation hidden);

  /// Random init: N(0, gain^2 / fan_in) weights, zero biases. The last
  /// layer's gain is multiplied by `output_gain`.
  DenseNet(const std::vector<int>& sizes, Activation hidden, Rng& rng, double output_gain = 1.0);

  /// Rebuilds a network from explicit layer shapes and a flat parameter vector.
  static DenseNet from_layers(const std::vector<std::pair<int, int>>& shapes,
                              const std::vector<Activation>& activations,
                              std::vector<double> parameters);

  int input_size() const { return layers_.empty() ? 0 : layers_.front().in; }
  int output_size() const { return layers_.empty() ? 0 : layers_.back().out; }
  std::size_t parameter_count() const { return params_.size(); }

  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }
  const std::vector<Layer>& layers() const { return layers_; }

  std::span<double> weights(std::size_t layer);
  std::span<double> bias(std::size_t layer);

  std::vector<double> forward(std::span<const double> input) const;
  /// Same as forward, recording activations into `tape`.
  std::span<const double> forward(std::span<const double> input, Tape& tape) const;

  /// Adds d(loss)/d(params) into `grad` given d(loss)/d(output).
  void backward(const Tape& tape, std::span<const double> upstream, std::span<double> grad) const;
  std::vector<double> backward(const Tape& tape, std::span<const double> upstream) const;

  friend bool operator==(const DenseNet&, const DenseNet&) = default;

 private:
  void build(const std::vector<int>& sizes, Activation hidden);
  void check_input(std::span<const double> input) const;

  std::vector<Layer> layers_;
  std::vector<double> params_;
};

// ---------------------------------------------------------------- policy heads

inline constexpr double kLogitClamp = 30.0;
inline const double kLogProbFloor = -18.420680743952367;  // ln(1e-8)

/// K independent Bernoulli query heads and one K-way categorical dispatch head.
struct PolicyHeads {
  std::vector<double> query_logits;      // clamped
  std::vector<double> query_prob;        // sigmoid
  std::vector<double> dispatch_logits;   // clamped
  std::vector<double> dispatch_log_prob; // log-softmax, unfloored
  std::vector<double> dispatch_prob;

  int n_servers() const { return static_cast<int>(query_prob.size()); }
};

/// Heads from separate query and dispatch logits (each of length K).
PolicyHeads make_heads(std::span<const double> query_logits,
                       std::span<const double> dispatch_logits);
/// Heads from one 2K-long output: query logits then dispatch logits.
PolicyHeads make_heads(std::span<const double> logits);

struct ActorAction {
  Bits queries;
  std::optional<int> dispatch;

  friend bool operator==(const ActorAction&, const ActorAction&) = default;
};

struct LogProbEntropy {
  double log_prob = 0.0;
  double entropy = 0.0;
};

/// Joint log-probability and summed head entropies. The dispatch head
/// contributes only when the action carries a dispatch.
LogProbEntropy log_prob_and_entropy(const PolicyHeads& heads, const ActorAction& action);

/// d/dlogits of (w_log_prob * log_prob + w_entropy * entropy), written into
/// `d_query` and `d_dispatch` (each length K, overwritten).
void head_gradient(const PolicyHeads& heads, const ActorAction& action, double w_log_prob,
                   double w_entropy, std::span<double> d_query, std::span<double> d_dispatch);

ActorAction sample_action(const PolicyHeads& heads, bool arrival, Rng& rng);
/// Queries with p > 0.5, dispatch to the modal server.
ActorAction greedy_action(const PolicyHeads& heads, bool arrival);

// ------------------------------------------------------------------ optimizer

struct AdamConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double max_grad_norm = 0.5;  // <= 0 disables clipping

  friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

struct OptimizerState {
  AdamConfig config;
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  std::int64_t steps = 0;

  OptimizerState() = default;
  OptimizerState(AdamConfig cfg, std::size_t n_params)
      : config(cfg), first_moment(n_params, 0.0), second_moment(n_params, 0.0) {}

  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

struct OptimizerReport {
  bool applied = false;
  double grad_norm = 0.0;
  bool clipped = false;
};

/// Adam with bias correction and global-norm clipping. A non-finite
/// gradient leaves parameters and moments untouched and reports applied=false.
OptimizerReport optimizer_step(OptimizerState& state, std::span<double> params,
                               std::span<const double> grads);

}  // namespace edgeq::nn
