#include "stepconf/nibs.hpp"

#include "stepconf/error.hpp"

namespace stepconf {

std::pair<std::vector<const Trajectory*>, std::vector<const Trajectory*>> partition(
    const TrajectorySet& set) {
  std::pair<std::vector<const Trajectory*>, std::vector<const Trajectory*>> out;
  for (const Trajectory& traj : set.trajectories) {
    (traj.answer_correct ? out.first : out.second).push_back(&traj);
  }
  return out;
}

ConfidenceVector nibs_score_graphs(const ReasoningGraph& target,
                                   std::span<const ReasoningGraph* const> refs,
                                   const NibsConfig& config) {
  if (!config.similarity) {
    throw Error(ErrKind::Usage, "missing_provider", "nibs requires a similarity provider");
  }
  std::vector<const ReasoningGraph*> anchors;
  for (const ReasoningGraph* ref : refs) {
    if (ref->trajectory_id == target.trajectory_id) continue;  // leave-one-out
    anchors.push_back(ref);
  }
  if (anchors.empty()) {
    throw Error(ErrKind::Data, "no_consensus_anchors",
                "no reference trajectories left to score against",
                {{"question_id", target.question_id},
                 {"trajectory_id", target.trajectory_id}});
  }

  ConfidenceVector out;
  out.trajectory_id = target.trajectory_id;
  out.scores.reserve(target.steps.size());
  std::vector<double> inner;
  for (const Step& step : target.steps) {
    double total = 0.0;
    for (const ReasoningGraph* anchor : anchors) {
      inner.clear();
      for (const Step& ref_step : anchor->steps) {
        inner.push_back(sim_steps(*config.similarity, step, ref_step, config.text_mode));
      }
      total += aggregate(config.aggregator, inner);
    }
    out.scores.push_back(total / static_cast<double>(anchors.size()));
  }
  return out;
}

ConfidenceVector nibs_score(const Trajectory& target,
                            std::span<const Trajectory* const> correct_set,
                            const NibsConfig& config) {
  std::vector<const ReasoningGraph*> refs;
  refs.reserve(correct_set.size());
  for (const Trajectory* traj : correct_set) refs.push_back(&traj->graph);
  return nibs_score_graphs(target.graph, refs, config);
}

}  // namespace stepconf
