#include "stepconf/mcs.hpp"

#include <algorithm>
#include <deque>

#include <fmt/format.h>

#include "stepconf/error.hpp"

namespace stepconf {

namespace {

constexpr int kUnset = -2;  // node ids start at kRootIndex == -1

// Partial injective node mapping over both graphs, with the virtual roots
// pre-mapped to each other. Slot x+1 holds the image of node x.
struct Mapping {
  std::vector<int> fwd, bwd;

  Mapping(std::size_t n1, std::size_t n2)
      : fwd(n1 + 1, kUnset), bwd(n2 + 1, kUnset) {
    fwd[0] = kRootIndex;
    bwd[0] = kRootIndex;
  }

  bool endpoint_ok(int a, int b) const {
    int image = fwd[a + 1];
    if (image != kUnset) return image == b;
    return bwd[b + 1] == kUnset;
  }

  // An edge never shares source and target, so the two endpoint checks are
  // independent.
  bool can_apply(const DirectedEdge& e1, const DirectedEdge& e2) const {
    return endpoint_ok(e1.source, e2.source) && endpoint_ok(e1.target, e2.target);
  }

  void apply(const DirectedEdge& e1, const DirectedEdge& e2) {
    fwd[e1.source + 1] = e2.source;
    bwd[e2.source + 1] = e1.source;
    fwd[e1.target + 1] = e2.target;
    bwd[e2.target + 1] = e1.target;
  }
};

struct Problem {
  std::vector<DirectedEdge> edges1, edges2;
  std::vector<CandidatePair> candidates;           // ranked
  std::vector<std::vector<int>> by_edge1;          // candidate indices per G1 edge, ranked
  McsCounters counters;
};

std::vector<CandidatePair> rank_pairs(std::vector<CandidatePair> pairs) {
  std::sort(pairs.begin(), pairs.end(), [](const CandidatePair& a, const CandidatePair& b) {
    double ca = a.combined(), cb = b.combined();
    if (ca != cb) return ca > cb;
    if (a.edge1 != b.edge1) return a.edge1 < b.edge1;
    return a.edge2 < b.edge2;
  });
  return pairs;
}

std::vector<CandidatePair> compute_candidates(const ReasoningGraph& g1, const ReasoningGraph& g2,
                                              const std::vector<DirectedEdge>& edges1,
                                              const std::vector<DirectedEdge>& edges2,
                                              const McsParams& params, McsCounters& counters) {
  if (!params.entailment) {
    throw Error(ErrKind::Usage, "missing_provider", "mcs requires an entailment provider");
  }
  const SimilarityProvider& entail = *params.entailment;
  std::vector<CandidatePair> qualifying;
  for (std::size_t i = 0; i < edges1.size(); ++i) {
    for (std::size_t k = 0; k < edges2.size(); ++k) {
      // Every pair costs exactly one edge-entailment evaluation, no caching.
      double edge_score = entail.entail(edges1[i].label, edges2[k].label);
      ++counters.edge_entail_calls;
      if (edge_score < params.edge_threshold) continue;

      const std::string& n1 = g1.steps[static_cast<std::size_t>(edges1[i].target)].node_text;
      const std::string& n2 = g2.steps[static_cast<std::size_t>(edges2[k].target)].node_text;
      CandidatePair pair;
      pair.edge1 = static_cast<int>(i);
      pair.edge2 = static_cast<int>(k);
      pair.edge_score = edge_score;
      if (n1.empty() && n2.empty()) {
        // Both linear-chain sentinels: the node check is vacuous.
      } else {
        double node_score = entail.entail(n1, n2);
        ++counters.node_entail_calls;
        if (node_score < params.node_threshold) continue;
        pair.node_score = node_score;
      }
      qualifying.push_back(pair);
    }
  }
  return rank_pairs(std::move(qualifying));
}

Problem build_problem(const ReasoningGraph& g1, const ReasoningGraph& g2,
                      const McsParams& params) {
  Problem p;
  p.edges1 = induced_edges(g1);
  p.edges2 = induced_edges(g2);
  p.candidates = compute_candidates(g1, g2, p.edges1, p.edges2, params, p.counters);
  p.by_edge1.resize(p.edges1.size());
  for (std::size_t c = 0; c < p.candidates.size(); ++c) {
    p.by_edge1[static_cast<std::size_t>(p.candidates[c].edge1)].push_back(static_cast<int>(c));
  }
  return p;
}

// Transposed view of a problem for the mirrored orientation; valid only for
// symmetric providers, so candidate scores carry over without new calls.
Problem transpose_problem(const Problem& p) {
  Problem t;
  t.edges1 = p.edges2;
  t.edges2 = p.edges1;
  t.counters = p.counters;
  t.candidates.reserve(p.candidates.size());
  for (const CandidatePair& c : p.candidates) {
    CandidatePair swapped = c;
    std::swap(swapped.edge1, swapped.edge2);
    t.candidates.push_back(swapped);
  }
  t.candidates = rank_pairs(std::move(t.candidates));
  t.by_edge1.resize(t.edges1.size());
  for (std::size_t c = 0; c < t.candidates.size(); ++c) {
    t.by_edge1[static_cast<std::size_t>(t.candidates[c].edge1)].push_back(static_cast<int>(c));
  }
  return t;
}

struct Matching {
  std::vector<int> pair_for_edge1;  // candidate index or -1, per G1 edge
  int size = 0;
};

// Grows a matching from one seed: scan G1 edges adjacent to mapped nodes in
// FIFO order, each processed once (feasibility only shrinks as the mapping
// grows, so retries cannot help).
Matching expand_seed(const Problem& p, int seed_candidate) {
  const std::size_t e1_count = p.edges1.size();
  Matching m;
  m.pair_for_edge1.assign(e1_count, -1);
  Mapping mapping(/*n1=*/0, /*n2=*/0);
  {
    // Size the slot arrays by max node id + 1.
    std::size_t n1 = 0, n2 = 0;
    for (const DirectedEdge& e : p.edges1) n1 = std::max(n1, static_cast<std::size_t>(e.target) + 1);
    for (const DirectedEdge& e : p.edges2) n2 = std::max(n2, static_cast<std::size_t>(e.target) + 1);
    mapping = Mapping(n1, n2);
  }
  std::vector<bool> used2(p.edges2.size(), false);
  std::vector<bool> enqueued(e1_count, false);
  std::vector<bool> node_mapped1(mapping.fwd.size(), false);
  node_mapped1[0] = true;  // virtual root

  const CandidatePair& seed = p.candidates[static_cast<std::size_t>(seed_candidate)];
  if (!mapping.can_apply(p.edges1[seed.edge1], p.edges2[seed.edge2])) return m;
  mapping.apply(p.edges1[seed.edge1], p.edges2[seed.edge2]);
  m.pair_for_edge1[static_cast<std::size_t>(seed.edge1)] = seed_candidate;
  m.size = 1;
  used2[static_cast<std::size_t>(seed.edge2)] = true;
  enqueued[static_cast<std::size_t>(seed.edge1)] = true;
  node_mapped1[static_cast<std::size_t>(p.edges1[seed.edge1].source) + 1] = true;
  node_mapped1[static_cast<std::size_t>(p.edges1[seed.edge1].target) + 1] = true;

  std::deque<int> queue;
  auto enqueue_adjacent = [&] {
    for (std::size_t e = 0; e < e1_count; ++e) {
      if (enqueued[e] || m.pair_for_edge1[e] != -1) continue;
      if (node_mapped1[static_cast<std::size_t>(p.edges1[e].source) + 1] ||
          node_mapped1[static_cast<std::size_t>(p.edges1[e].target) + 1]) {
        enqueued[e] = true;
        queue.push_back(static_cast<int>(e));
      }
    }
  };
  enqueue_adjacent();

  while (!queue.empty()) {
    int e1 = queue.front();
    queue.pop_front();
    for (int c : p.by_edge1[static_cast<std::size_t>(e1)]) {
      const CandidatePair& cand = p.candidates[static_cast<std::size_t>(c)];
      if (used2[static_cast<std::size_t>(cand.edge2)]) continue;
      if (!mapping.can_apply(p.edges1[cand.edge1], p.edges2[cand.edge2])) continue;
      mapping.apply(p.edges1[cand.edge1], p.edges2[cand.edge2]);
      m.pair_for_edge1[static_cast<std::size_t>(e1)] = c;
      ++m.size;
      used2[static_cast<std::size_t>(cand.edge2)] = true;
      node_mapped1[static_cast<std::size_t>(p.edges1[cand.edge1].source) + 1] = true;
      node_mapped1[static_cast<std::size_t>(p.edges1[cand.edge1].target) + 1] = true;
      enqueue_adjacent();
      break;
    }
  }
  return m;
}

McsResult matching_to_result(const Problem& p, const Matching& m) {
  McsResult result;
  result.node_mapping[kRootIndex] = kRootIndex;
  for (std::size_t e = 0; e < m.pair_for_edge1.size(); ++e) {
    int c = m.pair_for_edge1[e];
    if (c < 0) continue;
    const CandidatePair& cand = p.candidates[static_cast<std::size_t>(c)];
    result.matched_edge_pairs.push_back(
        {cand.edge1, cand.edge2, cand.edge_score, cand.node_score});
    const DirectedEdge& e1 = p.edges1[static_cast<std::size_t>(cand.edge1)];
    const DirectedEdge& e2 = p.edges2[static_cast<std::size_t>(cand.edge2)];
    result.node_mapping[e1.source] = e2.source;
    result.node_mapping[e1.target] = e2.target;
  }
  result.size = m.size;
  result.sim_call_count = p.counters.edge_entail_calls;
  result.node_call_count = p.counters.node_entail_calls;
  return result;
}

McsResult transpose_result(McsResult r) {
  for (MatchedPair& pair : r.matched_edge_pairs) std::swap(pair.edge1, pair.edge2);
  std::sort(r.matched_edge_pairs.begin(), r.matched_edge_pairs.end(),
            [](const MatchedPair& a, const MatchedPair& b) {
              return a.edge1 != b.edge1 ? a.edge1 < b.edge1 : a.edge2 < b.edge2;
            });
  std::map<int, int> inverted;
  for (const auto& [a, b] : r.node_mapping) inverted[b] = a;
  r.node_mapping = std::move(inverted);
  return r;
}

Matching best_expansion(const Problem& p, int seed_count) {
  Matching best;
  best.pair_for_edge1.assign(p.edges1.size(), -1);
  const int seeds = std::min<int>(seed_count, static_cast<int>(p.candidates.size()));
  for (int s = 0; s < seeds; ++s) {
    Matching m = expand_seed(p, s);
    if (m.size > best.size) best = std::move(m);
  }
  return best;
}

}  // namespace

std::vector<CandidatePair> candidate_pairs(const ReasoningGraph& g1, const ReasoningGraph& g2,
                                           const McsParams& params, McsCounters* counters) {
  McsCounters local;
  auto edges1 = induced_edges(g1);
  auto edges2 = induced_edges(g2);
  auto out = compute_candidates(g1, g2, edges1, edges2, params, local);
  if (counters != nullptr) {
    counters->edge_entail_calls += local.edge_entail_calls;
    counters->node_entail_calls += local.node_entail_calls;
  }
  return out;
}

McsResult mcs_heuristic(const ReasoningGraph& g1, const ReasoningGraph& g2,
                        const McsParams& params) {
  Problem p = build_problem(g1, g2, params);
  Matching best = best_expansion(p, params.seed_count);
  McsResult result = matching_to_result(p, best);

  if (params.entailment->symmetric()) {
    // The mirrored orientation can find larger matchings; scores are symmetric
    // so the candidate table transposes without further provider calls.
    Problem t = transpose_problem(p);
    Matching mirrored = best_expansion(t, params.seed_count);
    if (mirrored.size > best.size) {
      result = transpose_result(matching_to_result(t, mirrored));
      result.sim_call_count = p.counters.edge_entail_calls;
      result.node_call_count = p.counters.node_entail_calls;
    }
  }
  return result;
}

McsResult mcs_exact(const ReasoningGraph& g1, const ReasoningGraph& g2, const McsParams& params) {
  Problem p = build_problem(g1, g2, params);
  const std::size_t budget = p.edges1.size() * p.edges2.size();
  if (budget > 36) {
    throw Error(ErrKind::Data, "exact_guard",
                fmt::format("exact matcher limited to |E1|*|E2| <= 36, got {}", budget),
                {{"e1", p.edges1.size()}, {"e2", p.edges2.size()}});
  }

  std::size_t n1 = 0, n2 = 0;
  for (const DirectedEdge& e : p.edges1) n1 = std::max(n1, static_cast<std::size_t>(e.target) + 1);
  for (const DirectedEdge& e : p.edges2) n2 = std::max(n2, static_cast<std::size_t>(e.target) + 1);

  Matching best;
  best.pair_for_edge1.assign(p.edges1.size(), -1);
  Matching current = best;
  std::vector<bool> used2(p.edges2.size(), false);

  // Depth-first over G1 edges in order; at each, match one ranked qualifying
  // partner or skip. Strict improvement keeps the first-found optimum, so the
  // result is deterministic.
  auto recurse = [&](auto&& self, std::size_t i, const Mapping& mapping) -> void {
    if (current.size + static_cast<int>(p.edges1.size() - i) <= best.size) return;
    if (i == p.edges1.size()) {
      if (current.size > best.size) best = current;
      return;
    }
    for (int c : p.by_edge1[i]) {
      const CandidatePair& cand = p.candidates[static_cast<std::size_t>(c)];
      if (used2[static_cast<std::size_t>(cand.edge2)]) continue;
      if (!mapping.can_apply(p.edges1[cand.edge1], p.edges2[cand.edge2])) continue;
      Mapping next = mapping;
      next.apply(p.edges1[cand.edge1], p.edges2[cand.edge2]);
      current.pair_for_edge1[i] = c;
      ++current.size;
      used2[static_cast<std::size_t>(cand.edge2)] = true;
      self(self, i + 1, next);
      used2[static_cast<std::size_t>(cand.edge2)] = false;
      --current.size;
      current.pair_for_edge1[i] = -1;
    }
    self(self, i + 1, mapping);
  };
  recurse(recurse, 0, Mapping(n1, n2));
  return matching_to_result(p, best);
}

ConsensusMask consensus_mask(const ReasoningGraph& graph,
                             std::span<const ReasoningGraph* const> anchors,
                             const McsParams& params, McsEngine engine) {
  std::vector<const ReasoningGraph*> loo;
  for (const ReasoningGraph* anchor : anchors) {
    if (anchor->trajectory_id == graph.trajectory_id) continue;
    loo.push_back(anchor);
  }
  if (loo.empty()) {
    throw Error(ErrKind::Data, "no_consensus_anchors",
                "no anchor graphs left to build a consensus mask",
                {{"question_id", graph.question_id}, {"trajectory_id", graph.trajectory_id}});
  }

  const auto edges1 = induced_edges(graph);
  std::vector<int> hits(graph.steps.size(), 0);
  for (const ReasoningGraph* anchor : loo) {
    McsResult result = engine == McsEngine::Heuristic ? mcs_heuristic(graph, *anchor, params)
                                                      : mcs_exact(graph, *anchor, params);
    std::vector<bool> step_matched(graph.steps.size(), false);
    for (const MatchedPair& pair : result.matched_edge_pairs) {
      step_matched[static_cast<std::size_t>(edges1[static_cast<std::size_t>(pair.edge1)].target)] =
          true;
    }
    for (std::size_t j = 0; j < step_matched.size(); ++j) hits[j] += step_matched[j] ? 1 : 0;
  }

  ConsensusMask mask;
  mask.values.reserve(graph.steps.size());
  for (std::size_t j = 0; j < graph.steps.size(); ++j) {
    mask.values.push_back(static_cast<double>(hits[j]) / static_cast<double>(loo.size()));
  }
  return mask;
}

std::vector<const ReasoningGraph*> select_anchors(const TrajectorySet& set,
                                                  AnchorStrategy strategy) {
  std::vector<const ReasoningGraph*> anchors;
  switch (strategy) {
    case AnchorStrategy::CorrectOnly:
      for (const Trajectory& traj : set.trajectories) {
        if (traj.answer_correct) anchors.push_back(&traj.graph);
      }
      break;
    case AnchorStrategy::AllTrajectories:
      for (const Trajectory& traj : set.trajectories) anchors.push_back(&traj.graph);
      break;
    case AnchorStrategy::SelfConsistency: {
      std::vector<std::string> order;      // first-seen answer order
      std::map<std::string, int> counts;
      for (const Trajectory& traj : set.trajectories) {
        if (counts.emplace(traj.graph.final_answer, 0).second) {
          order.push_back(traj.graph.final_answer);
        }
        ++counts[traj.graph.final_answer];
      }
      std::string modal;
      int best = -1;
      for (const std::string& answer : order) {
        if (counts[answer] > best) {  // strict: first-seen answer wins ties
          best = counts[answer];
          modal = answer;
        }
      }
      for (const Trajectory& traj : set.trajectories) {
        if (traj.graph.final_answer == modal) anchors.push_back(&traj.graph);
      }
      break;
    }
  }
  return anchors;
}

std::vector<McsProportion> mcs_proportion(const TrajectorySet& set, const McsParams& params,
                                          McsEngine engine) {
  if (set.trajectories.size() < 2) {
    throw Error(ErrKind::Data, "need_two_trajectories",
                "mcs proportions need at least two trajectories",
                {{"question_id", set.question_id}});
  }
  std::vector<McsProportion> out;
  for (const Trajectory& traj : set.trajectories) {
    const auto edges = induced_edges(traj.graph);
    if (edges.empty()) {
      throw Error(ErrKind::Data, "empty_graph",
                  "cannot compute an mcs proportion for a graph with no edges",
                  {{"question_id", set.question_id},
                   {"trajectory_id", traj.graph.trajectory_id}});
    }
    double total = 0.0;
    int others = 0;
    for (const Trajectory& other : set.trajectories) {
      if (&other == &traj) continue;
      McsResult result = engine == McsEngine::Heuristic
                             ? mcs_heuristic(traj.graph, other.graph, params)
                             : mcs_exact(traj.graph, other.graph, params);
      total += static_cast<double>(result.size) / static_cast<double>(edges.size());
      ++others;
    }
    out.push_back({traj.graph.trajectory_id, total / static_cast<double>(others),
                   traj.answer_correct});
  }
  return out;
}

}  // namespace stepconf
