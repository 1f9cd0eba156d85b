#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "edgeq/env.hpp"

namespace edgeq::selfcheck {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Random configurations driven by random valid actions; after every slot
/// checks queue bounds, job conservation, AoI resets, per-server service
/// limits and the reward identity.
struct InvariantOptions {
  int configs = 50;
  std::int64_t total_steps = 100000;
  std::uint64_t seed = 2024;
};
CheckResult invariant_suite(const InvariantOptions& options = {});

/// Exact long-run completions per slot for one dispatcher and one server,
/// from the stationary law of the joint (availability, queue) chain.
double exact_single_server_throughput(double arrival, double stay_available,
                                      double stay_unavailable, int capacity);

/// Simulated throughput within `z` batch-means standard errors of the exact value.
struct OracleOptions {
  double arrival = 0.6;
  double stay_available = 0.9;
  double stay_unavailable = 0.7;
  int capacity = 1;
  std::int64_t slots = 1000000;
  int batches = 100;
  double z = 3.0;
  std::uint64_t seed = 7;
};
struct OracleReport {
  double exact = 0.0;
  double simulated = 0.0;
  double standard_error = 0.0;
  bool passed = false;
};
OracleReport markov_oracle(const OracleOptions& options = {});

/// Central finite differences (h = 1e-5) against backprop through random
/// networks and policy heads; passes when the largest relative error < 1e-4.
struct GradientReport {
  double max_relative_error = 0.0;
  std::size_t parameters_checked = 0;
  bool passed = false;
};
GradientReport gradient_check(int networks = 20, std::uint64_t seed = 11);

std::vector<CheckResult> run_all();

}  // namespace edgeq::selfcheck
