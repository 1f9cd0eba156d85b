#pragma once

#include <memory>
#include <string>

#include "edgeq/env.hpp"

namespace edgeq {

/// Chooses every dispatcher's action for the current slot. Implementations
/// keep no mutable state; randomness comes only from the injected RNG, so a
/// single instance may drive several environments from different threads.
class JointPolicy {
 public:
  virtual ~JointPolicy() = default;
  virtual JointAction act(const Environment& env, Rng& rng) const = 0;
  virtual std::string name() const = 0;
};

using PolicyPtr = std::shared_ptr<const JointPolicy>;

/// Copy of `snapshot` with this slot's query answers written over the
/// queried servers (aoi 0 marks same-slot information).
KnowledgeSnapshot overlay_responses(const KnowledgeSnapshot& snapshot, int dispatcher,
                                    std::span<const QueryResponse> responses);

}  // namespace edgeq
