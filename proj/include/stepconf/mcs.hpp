#pragma once

#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stepconf/similarity.hpp"
#include "stepconf/trace.hpp"

namespace stepconf {

struct McsParams {
  double edge_threshold = 0.7;  // minimum entailment between edge labels
  double node_threshold = 0.7;  // minimum entailment between target node texts
  int seed_count = 10;          // expansion restarts from the top-K candidate pairs
  std::shared_ptr<const SimilarityProvider> entailment;
};

struct CandidatePair {
  int edge1 = 0;  // index into induced_edges(g1)
  int edge2 = 0;  // index into induced_edges(g2)
  double edge_score = 0.0;
  // Absent when both target node texts are the linear-chain sentinel, in which
  // case the node check is vacuous and ranking falls back to the edge score.
  std::optional<double> node_score;

  double combined() const {
    return node_score ? (edge_score + *node_score) / 2.0 : edge_score;
  }
};

struct McsCounters {
  long long edge_entail_calls = 0;  // always |E1| * |E2|
  long long node_entail_calls = 0;  // only pairs that pass the edge gate
};

struct MatchedPair {
  int edge1 = 0;
  int edge2 = 0;
  double edge_score = 0.0;
  std::optional<double> node_score;
};

struct McsResult {
  std::vector<MatchedPair> matched_edge_pairs;
  std::map<int, int> node_mapping;  // G1 node -> G2 node, root included
  int size = 0;                     // matched edge count
  long long sim_call_count = 0;     // edge-entailment evaluations
  long long node_call_count = 0;
};

// Evaluates edge entailment for every pair in E1 x E2 (exactly |E1|*|E2|
// provider calls, instrumented), gates by both thresholds, and returns
// qualifying pairs ranked by combined score descending, ties by
// (edge1, edge2) ascending.
std::vector<CandidatePair> candidate_pairs(const ReasoningGraph& g1, const ReasoningGraph& g2,
                                           const McsParams& params,
                                           McsCounters* counters = nullptr);

// Greedy multi-seed expansion: for each of the top-K candidate pairs, grow a
// consistent edge matching by scanning G1 edges adjacent to already-mapped
// nodes (the virtual roots start pre-mapped to each other) and taking the
// best-ranked unmatched qualifying partner. With a symmetric provider the
// mirrored orientation is also tried and the larger matching kept.
// Deterministic throughout.
McsResult mcs_heuristic(const ReasoningGraph& g1, const ReasoningGraph& g2,
                        const McsParams& params);

// Exhaustive branch-and-bound over consistent subsets of qualifying pairs.
// Refuses instances with |E1|*|E2| > 36 (Error{Data, "exact_guard"}).
McsResult mcs_exact(const ReasoningGraph& g1, const ReasoningGraph& g2, const McsParams& params);

enum class McsEngine { Heuristic, Exact };

struct ConsensusMask {
  std::vector<double> values;  // one per step of the target graph, in [0, 1]
};

// values[j] = fraction of anchor graphs whose maximum common subgraph with the
// target matches at least one induced edge of step j. The target is excluded
// from the anchors by trajectory_id; an empty anchor set raises
// Error{Data, "no_consensus_anchors"}.
ConsensusMask consensus_mask(const ReasoningGraph& graph,
                             std::span<const ReasoningGraph* const> anchors,
                             const McsParams& params, McsEngine engine = McsEngine::Heuristic);

enum class AnchorStrategy { CorrectOnly, AllTrajectories, SelfConsistency };

// correct-only: graphs with answer_correct. all-trajectories: every graph.
// self-consistency: graphs whose final_answer equals the modal answer (ties
// broken by first-seen answer). correct-only with zero correct trajectories
// yields an empty list; the caller decides what that means.
std::vector<const ReasoningGraph*> select_anchors(const TrajectorySet& set,
                                                  AnchorStrategy strategy);

struct McsProportion {
  std::string trajectory_id;
  double proportion = 0.0;
  bool answer_correct = false;
};

// For each trajectory: mean over the question's other trajectories of
// size(MCS(G_i, G_k)) / |E_i|. Needs >= 2 trajectories.
std::vector<McsProportion> mcs_proportion(const TrajectorySet& set, const McsParams& params,
                                          McsEngine engine = McsEngine::Heuristic);

}  // namespace stepconf
