#pragma once

#include <optional>
#include <string>
#include <vector>

namespace stepconf {

// Virtual node standing for the question itself; parent of premise-free steps.
inline constexpr int kRootIndex = -1;

struct Step {
  int index = 0;
  std::string edge_text;         // operation / sub-question producing this step
  std::string node_text;         // intermediate result; "" only in linear chains
  std::vector<int> depends_on;   // parent step indices, each in [0, index)
};

struct ReasoningGraph {
  std::string question_id;
  std::string trajectory_id;
  std::vector<Step> steps;       // indices 0..L-1, in order
  std::string final_answer;
};

struct DirectedEdge {
  int source = kRootIndex;       // parent step index, or kRootIndex
  int target = 0;                // the step this edge produces
  std::string label;             // the target step's edge_text

  friend bool operator==(const DirectedEdge&, const DirectedEdge&) = default;
};

struct Trajectory {
  ReasoningGraph graph;
  bool answer_correct = false;
  // Ground-truth per-step correctness, evaluation-only.
  std::optional<std::vector<bool>> step_labels;
};

struct TrajectorySet {
  std::string question_id;
  std::string question_text;
  std::optional<std::string> gold_answer;
  std::vector<Trajectory> trajectories;
};

struct ConfidenceVector {
  std::string trajectory_id;
  std::vector<double> scores;    // one per step, each in [0, 1]
};

// Human-readable invariant violations ("step 1: forward dependency", ...).
// Empty means the graph is well formed.
std::vector<std::string> validate(const ReasoningGraph& graph);

// Expands steps into matchable edges: one edge per parent, sharing the step's
// edge_text as label, or a single edge from the virtual root when the step has
// no parents. Ordered by (target, source). Throws Error{Data} on an invalid
// graph.
std::vector<DirectedEdge> induced_edges(const ReasoningGraph& graph);

}  // namespace stepconf
