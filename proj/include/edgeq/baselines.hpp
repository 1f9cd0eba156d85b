#pragma once

#include <functional>
#include <string>

#include "edgeq/env.hpp"
#include "edgeq/policy.hpp"

namespace edgeq {

struct BaselineKind {
  enum class Variant { NeverQuery, RandomQuery, AlwaysQuery };

  Variant variant = Variant::NeverQuery;
  double query_prob = 0.5;  // RandomQuery only

  static BaselineKind never() { return {Variant::NeverQuery, 0.0}; }
  static BaselineKind random(double p = 0.5);
  static BaselineKind always() { return {Variant::AlwaysQuery, 1.0}; }

  /// "never", "random:<p>", "always".
  std::string label() const;

  friend bool operator==(const BaselineKind&, const BaselineKind&) = default;
};

Bits baseline_queries(const BaselineKind& kind, int n_servers, Rng& rng);

/// Smallest believed queue; ties go to a server believed available, then to
/// the lowest index.
int least_loaded_dispatch(const KnowledgeSnapshot& snapshot);

using QueryAnswerer = std::function<std::vector<QueryResponse>(const Bits& queries)>;

/// Draws this slot's queries, collects their same-slot answers through
/// `answer`, and on arrival dispatches least-loaded on the overlaid view.
DispatcherAction baseline_step(const BaselineKind& kind, const KnowledgeSnapshot& snapshot,
                               int dispatcher, bool arrival, const QueryAnswerer& answer,
                               Rng& rng);

class BaselinePolicy final : public JointPolicy {
 public:
  explicit BaselinePolicy(BaselineKind kind) : kind_(kind) {}

  JointAction act(const Environment& env, Rng& rng) const override;
  std::string name() const override { return kind_.label(); }
  const BaselineKind& kind() const { return kind_; }

 private:
  BaselineKind kind_;
};

}  // namespace edgeq
