#include "edgeq/baselines.hpp"

#include <sstream>

namespace edgeq {

KnowledgeSnapshot overlay_responses(const KnowledgeSnapshot& snapshot, int dispatcher,
                                    std::span<const QueryResponse> responses) {
  KnowledgeSnapshot view = snapshot;
  for (const auto& r : responses) {
    if (r.dispatcher != dispatcher) continue;
    auto& s = view.servers.at(static_cast<std::size_t>(r.server));
    s.seen_available = r.reported_available;
    s.seen_queue = r.reported_queue;
    s.aoi = 0;
  }
  return view;
}

BaselineKind BaselineKind::random(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("random query probability must lie in [0,1]");
  return {Variant::RandomQuery, p};
}

std::string BaselineKind::label() const {
  switch (variant) {
    case Variant::NeverQuery: return "never";
    case Variant::AlwaysQuery: return "always";
    case Variant::RandomQuery: break;
  }
  std::ostringstream os;
  os << "random:" << query_prob;
  return os.str();
}

Bits baseline_queries(const BaselineKind& kind, int n_servers, Rng& rng) {
  Bits q(static_cast<std::size_t>(n_servers), 0);
  switch (kind.variant) {
    case BaselineKind::Variant::NeverQuery:
      break;
    case BaselineKind::Variant::AlwaysQuery:
      std::fill(q.begin(), q.end(), 1);
      break;
    case BaselineKind::Variant::RandomQuery: {
      std::bernoulli_distribution coin(kind.query_prob);
      for (auto& bit : q) bit = coin(rng) ? 1 : 0;
      break;
    }
  }
  return q;
}

int least_loaded_dispatch(const KnowledgeSnapshot& snapshot) {
  if (snapshot.servers.empty()) throw ContractError("snapshot covers no servers");
  std::size_t best = 0;
  for (std::size_t k = 1; k < snapshot.servers.size(); ++k) {
    const auto& a = snapshot.servers[k];
    const auto& b = snapshot.servers[best];
    if (a.seen_queue < b.seen_queue ||
        (a.seen_queue == b.seen_queue && a.seen_available && !b.seen_available))
      best = k;
  }
  return static_cast<int>(best);
}

DispatcherAction baseline_step(const BaselineKind& kind, const KnowledgeSnapshot& snapshot,
                               int dispatcher, bool arrival, const QueryAnswerer& answer,
                               Rng& rng) {
  DispatcherAction action;
  action.queries = baseline_queries(kind, static_cast<int>(snapshot.servers.size()), rng);
  if (!arrival) return action;

  bool any = false;
  for (auto bit : action.queries) any = any || bit != 0;
  if (any && answer) {
    const auto responses = answer(action.queries);
    action.dispatch = least_loaded_dispatch(overlay_responses(snapshot, dispatcher, responses));
  } else {
    action.dispatch = least_loaded_dispatch(snapshot);
  }
  return action;
}

JointAction BaselinePolicy::act(const Environment& env, Rng& rng) const {
  const auto& cfg = env.config();
  JointAction joint;
  joint.dispatchers.reserve(static_cast<std::size_t>(cfg.n_dispatchers));
  for (int n = 0; n < cfg.n_dispatchers; ++n) {
    const QueryAnswerer answer = [&env, n, &cfg](const Bits& queries) {
      JointAction probe = JointAction::idle(cfg.n_dispatchers, cfg.n_servers);
      probe.dispatchers[static_cast<std::size_t>(n)].queries = queries;
      return env.peek_queries(probe);
    };
    const bool arrival = env.arrivals()[static_cast<std::size_t>(n)] != 0;
    joint.dispatchers.push_back(
        baseline_step(kind_, env.world().knowledge[static_cast<std::size_t>(n)], n, arrival,
                      answer, rng));
  }
  return joint;
}

}  // namespace edgeq
