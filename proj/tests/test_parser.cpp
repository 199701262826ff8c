#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <functional>
#include <string>
#include <vector>

#include "stepconf/error.hpp"
#include "stepconf/parser.hpp"
#include "stepconf/rng.hpp"
#include "stepconf/trace.hpp"

using namespace stepconf;

namespace {

std::string error_code(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return "";
}

const char* kWorked = R"(ReasoningGraph(
  nodes=[
    ReasoningNode(id=0, description="compute x", output=4, depends_on=[]),
    ReasoningNode(id=1, description="double it", output=8.5, depends_on=[0]),
  ],
  final_answer="8"
))";

}  // namespace

TEST_CASE("structured parse of a plain constructor") {
  const ParsedGraph parsed = parse_structured(kWorked);
  CHECK(parsed.warnings.empty());
  const ReasoningGraph& g = parsed.graph;
  REQUIRE(g.steps.size() == 2);
  CHECK(g.final_answer == "8");
  CHECK(g.steps[0].edge_text == "compute x");
  CHECK(g.steps[0].node_text == "4");  // integers render without decoration
  CHECK(g.steps[0].depends_on.empty());
  CHECK(g.steps[1].edge_text == "double it");
  CHECK(g.steps[1].node_text == "8.5");  // shortest round-trip float rendering
  CHECK(g.steps[1].depends_on == std::vector<int>{0});
  CHECK(validate(g).empty());
}

TEST_CASE("constructor embedded in chatter is still found") {
  const std::string text = "Sure! Here is the graph you asked for:\n\n" + std::string(kWorked) +
                           "\n\nHope that helps!";
  CHECK(parse_structured(text).graph.steps.size() == 2);
}

TEST_CASE("single-quoted strings and trailing commas are accepted") {
  const ParsedGraph parsed = parse_structured(
      "ReasoningGraph(nodes=[ReasoningNode(id=3, description='a \"quoted\" word', "
      "output='it\\'s fine', depends_on=[],),], final_answer='ok',)");
  REQUIRE(parsed.graph.steps.size() == 1);
  CHECK(parsed.graph.steps[0].edge_text == "a \"quoted\" word");
  CHECK(parsed.graph.steps[0].node_text == "it's fine");
  CHECK(parsed.graph.final_answer == "ok");
}

TEST_CASE("node ids are arbitrary and remapped to step indices") {
  const ParsedGraph parsed = parse_structured(
      "ReasoningGraph(nodes=["
      "ReasoningNode(id=10, description=\"first\", output=1, depends_on=[]),"
      "ReasoningNode(id=7, description=\"second\", output=2, depends_on=[10]),"
      "ReasoningNode(id=5, description=\"third\", output=3, depends_on=[10, 7])"
      "], final_answer=3)");
  const ReasoningGraph& g = parsed.graph;
  REQUIRE(g.steps.size() == 3);
  CHECK(g.steps[1].depends_on == std::vector<int>{0});
  CHECK(g.steps[2].depends_on == std::vector<int>{0, 1});
  CHECK(g.final_answer == "3");
}

TEST_CASE("unknown or forward references are dropped with a warning") {
  const ParsedGraph parsed = parse_structured(
      "ReasoningGraph(nodes=["
      "ReasoningNode(id=0, description=\"a\", output=0, depends_on=[99]),"
      "ReasoningNode(id=1, description=\"b\", output=1, depends_on=[0, 0])"
      "], final_answer=\"x\")");
  REQUIRE(parsed.warnings.size() == 1);
  CHECK(parsed.warnings[0].kind == "dropped_dependency");
  CHECK(parsed.warnings[0].detail.at("ref_id") == 99);
  CHECK(parsed.graph.steps[0].depends_on.empty());
  // The duplicate reference collapses to a single edge.
  CHECK(parsed.graph.steps[1].depends_on == std::vector<int>{0});
}

TEST_CASE("a repeated id refers to its latest earlier occurrence") {
  const ParsedGraph parsed = parse_structured(
      "ReasoningGraph(nodes=["
      "ReasoningNode(id=0, description=\"old\", output=0, depends_on=[]),"
      "ReasoningNode(id=0, description=\"new\", output=1, depends_on=[]),"
      "ReasoningNode(id=2, description=\"uses\", output=2, depends_on=[0])"
      "], final_answer=0)");
  CHECK(parsed.graph.steps[2].depends_on == std::vector<int>{1});
}

TEST_CASE("extra keyword arguments are ignored") {
  const ParsedGraph parsed = parse_structured(
      "ReasoningGraph(nodes=[ReasoningNode(id=0, description=\"a\", output=1, depends_on=[], "
      "confidence=0.9)], final_answer=1, model=\"m\")");
  CHECK(parsed.graph.steps.size() == 1);
}

TEST_CASE("a broken first candidate falls through to a later good one") {
  const std::string text = "ReasoningGraph(nodes=[broken... " + std::string(kWorked);
  CHECK(parse_structured(text).graph.steps.size() == 2);
}

TEST_CASE("identifiers merely containing the constructor name do not match") {
  CHECK(error_code([] { parse_structured("MyReasoningGraphX(nodes=[], final_answer=1)"); }) ==
        "no_constructor");
  // A prefixed identifier is a different name, but the bare suffix inside it
  // must not be treated as a hit.
  CHECK(error_code([] { parse_structured("ReasoningGraph2(nodes=[], final_answer=1)"); }) ==
        "no_constructor");
}

TEST_CASE("structural failures carry a code and byte offset") {
  struct Case {
    const char* text;
    const char* code;
  };
  const Case cases[] = {
      {"no graph here", "no_constructor"},
      {"ReasoningGraph(final_answer=1)", "missing_key"},
      {"ReasoningGraph(nodes=[], )", "missing_key"},  // tolerated comma, missing answer
      {"ReasoningGraph(nodes=3, final_answer=1)", "bad_value"},
      {"ReasoningGraph(nodes=[1], final_answer=1)", "bad_value"},
      {"ReasoningGraph(nodes=[Foo(id=0, description=\"a\", output=1, depends_on=[])], "
       "final_answer=1)",
       "bad_value"},
      {"ReasoningGraph(nodes=[ReasoningNode(id=0, description=\"a\", output=[1], "
       "depends_on=[])], final_answer=1)",
       "bad_value"},
      {"ReasoningGraph(nodes=[ReasoningNode(id=0, description=\"a\", output=1, "
       "depends_on=[\"x\"])], final_answer=1)",
       "bad_value"},
      {"ReasoningGraph(nodes=[ReasoningNode(description=\"a\", output=1, depends_on=[])], "
       "final_answer=1)",
       "missing_key"},
      {"ReasoningGraph(nodes=[", "unbalanced_delimiters"},
  };
  for (const Case& c : cases) {
    CAPTURE(c.text);
    try {
      parse_structured(c.text);
      FAIL_CHECK("expected an error for: " << c.text);
    } catch (const Error& e) {
      CHECK(e.code() == c.code);
      CHECK(e.kind() == ErrKind::Data);
      CHECK(e.detail().contains("byte_offset"));
    }
  }
}

TEST_CASE("linear parse chains non-empty sentences") {
  const std::vector<std::string> sentences{"First we note A.", "  ", "Then B follows.",
                                           "So the answer is C."};
  const ReasoningGraph g = parse_linear(sentences);
  REQUIRE(g.steps.size() == 3);
  CHECK(g.steps[0].edge_text == "First we note A.");
  CHECK(g.steps[0].node_text == "");
  CHECK(g.steps[0].depends_on.empty());
  CHECK(g.steps[1].depends_on == std::vector<int>{0});
  CHECK(g.steps[2].depends_on == std::vector<int>{1});
  CHECK(validate(g).empty());
}

TEST_CASE("linear parse of nothing is an error") {
  CHECK(error_code([] { parse_linear(std::vector<std::string>{"", "  "}); }) == "empty_input");
}

TEST_CASE("random byte soup never crashes the parser") {
  Rng rng(20260819);
  for (int round = 0; round < 1000; ++round) {
    const std::size_t len = rng.below(160);
    std::string text;
    for (std::size_t i = 0; i < len; ++i) {
      text.push_back(static_cast<char>(rng.below(256)));
    }
    try {
      const ParsedGraph parsed = parse_structured(text);
      CHECK(validate(parsed.graph).empty());
    } catch (const Error&) {
      // Structured failure is the expected outcome for noise.
    }
  }
}

TEST_CASE("mutated near-valid constructors never crash the parser") {
  Rng rng(42);
  const std::string base = kWorked;
  int parsed_ok = 0;
  for (int round = 0; round < 1000; ++round) {
    std::string text = base;
    const int edits = 1 + static_cast<int>(rng.below(4));
    for (int e = 0; e < edits; ++e) {
      const std::size_t at = rng.below(text.size());
      switch (rng.below(3)) {
        case 0:
          text[at] = static_cast<char>(rng.below(256));
          break;
        case 1:
          text.erase(at, 1);
          break;
        default:
          text.insert(at, 1, static_cast<char>(rng.below(128)));
          break;
      }
    }
    try {
      const ParsedGraph parsed = parse_structured(text);
      CHECK(validate(parsed.graph).empty());
      ++parsed_ok;
    } catch (const Error&) {
    }
  }
  // Many single-byte edits land in string literals and still parse.
  CHECK(parsed_ok > 0);
}
