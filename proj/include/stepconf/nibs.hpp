#pragma once

#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "stepconf/similarity.hpp"
#include "stepconf/trace.hpp"

namespace stepconf {

struct NibsConfig {
  std::shared_ptr<const SimilarityProvider> similarity;
  AggMode aggregator = AggMode::Max;
  StepTextMode text_mode = StepTextMode::EdgeAndNode;
};

// Splits a question's trajectories by answer_correct, preserving order.
std::pair<std::vector<const Trajectory*>, std::vector<const Trajectory*>> partition(
    const TrajectorySet& set);

// Per-step confidence: for each step of `target`, aggregate its similarity
// against each reference trajectory's steps, then average over references.
// The target is excluded from `refs` by trajectory_id (leave-one-out); an
// empty reference set raises Error{Data, "no_consensus_anchors"}.
ConfidenceVector nibs_score_graphs(const ReasoningGraph& target,
                                   std::span<const ReasoningGraph* const> refs,
                                   const NibsConfig& config);

ConfidenceVector nibs_score(const Trajectory& target,
                            std::span<const Trajectory* const> correct_set,
                            const NibsConfig& config);

}  // namespace stepconf
