#include "stepconf/trace.hpp"

#include <algorithm>
#include <set>

#include <fmt/format.h>

#include "stepconf/error.hpp"
#include "stepconf/text.hpp"

namespace stepconf {

std::vector<std::string> validate(const ReasoningGraph& graph) {
  std::vector<std::string> violations;
  for (std::size_t j = 0; j < graph.steps.size(); ++j) {
    const Step& step = graph.steps[j];
    const int idx = static_cast<int>(j);
    if (step.index != idx) {
      violations.push_back(fmt::format("step {}: index mismatch (recorded {})", idx, step.index));
    }
    if (trim(step.edge_text).empty()) {
      violations.push_back(fmt::format("step {}: empty edge_text", idx));
    }
    // node_text may be the exact empty sentinel (linear chains); whitespace-only
    // text is neither the sentinel nor real content.
    if (!step.node_text.empty() && trim(step.node_text).empty()) {
      violations.push_back(fmt::format("step {}: blank node_text", idx));
    }
    std::set<int> seen;
    for (int dep : step.depends_on) {
      if (dep < 0) {
        violations.push_back(fmt::format("step {}: negative dependency ({})", idx, dep));
      } else if (dep >= idx) {
        violations.push_back(fmt::format("step {}: forward dependency", idx));
      } else if (!seen.insert(dep).second) {
        violations.push_back(fmt::format("step {}: duplicate dependency ({})", idx, dep));
      }
    }
  }
  return violations;
}

std::vector<DirectedEdge> induced_edges(const ReasoningGraph& graph) {
  auto violations = validate(graph);
  if (!violations.empty()) {
    throw Error(ErrKind::Data, "invalid_graph",
                fmt::format("graph {}/{} violates step invariants", graph.question_id,
                            graph.trajectory_id),
                {{"violations", violations}});
  }
  std::vector<DirectedEdge> edges;
  for (const Step& step : graph.steps) {
    if (step.depends_on.empty()) {
      edges.push_back({kRootIndex, step.index, step.edge_text});
    } else {
      std::vector<int> parents = step.depends_on;
      std::sort(parents.begin(), parents.end());
      for (int p : parents) {
        edges.push_back({p, step.index, step.edge_text});
      }
    }
  }
  // Steps are walked in index order and parents ascending, so the list is
  // already ordered by (target, source).
  return edges;
}

}  // namespace stepconf
