#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "stepconf/trace.hpp"

namespace stepconf {

struct ParseWarning {
  std::string kind;          // e.g. "dropped_dependency"
  nlohmann::json detail;
};

struct ParsedGraph {
  ReasoningGraph graph;
  std::vector<ParseWarning> warnings;
};

// Extracts a ReasoningGraph(nodes=[ReasoningNode(...), ...], final_answer=...)
// constructor expression from free-form model output (code fences and
// surrounding prose are fine). Node ids are remapped to contiguous 0-based
// step indices in list order; dependencies on unknown or not-yet-seen ids are
// dropped with a warning. Throws Error{Data} with a byte offset on failure;
// never crashes on arbitrary bytes.
ParsedGraph parse_structured(std::string_view text);

// Plain chain-of-thought fallback: sentence j becomes step j with the sentence
// as edge_text, the empty node_text sentinel, and a dependency on step j-1.
// Blank sentences are skipped; throws Error{Data} when nothing remains.
ReasoningGraph parse_linear(std::span<const std::string> sentences);

}  // namespace stepconf
