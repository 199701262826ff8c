#include "stepconf/parser.hpp"

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <variant>

#include <fmt/format.h>

#include "stepconf/error.hpp"
#include "stepconf/text.hpp"

namespace stepconf {

namespace {

constexpr int kMaxDepth = 64;

[[noreturn]] void fail(const char* code, std::size_t offset, std::string message) {
  throw Error(ErrKind::Data, code, std::move(message), {{"byte_offset", offset}});
}

struct Ctor;

using Value = std::variant<std::int64_t, double, std::string, std::vector<struct ValueBox>, Ctor>;

struct ValueBox {
  std::shared_ptr<Value> v;  // indirection keeps the recursive variant simple
};

struct Ctor {
  std::string name;
  std::size_t offset = 0;  // byte offset of the constructor name
  std::vector<std::pair<std::string, ValueBox>> kvs;

  const Value* find(std::string_view key) const {
    for (const auto& [k, v] : kvs) {
      if (k == key) return v.v.get();
    }
    return nullptr;
  }
};

class Cursor {
 public:
  explicit Cursor(std::string_view text) : text_(text) {}

  std::size_t pos() const { return pos_; }
  void seek(std::size_t p) { pos_ = p; }
  bool eof() const { return pos_ >= text_.size(); }
  char peek() const { return text_[pos_]; }

  void skip_ws() {
    while (!eof()) {
      char c = text_[pos_];
      if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') {
        ++pos_;
      } else {
        break;
      }
    }
  }

  bool consume(char c) {
    skip_ws();
    if (!eof() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  void expect(char c, const char* code) {
    skip_ws();
    if (eof()) {
      fail("unbalanced_delimiters", pos_, fmt::format("expected '{}' but input ended", c));
    }
    if (text_[pos_] != c) {
      fail(code, pos_, fmt::format("expected '{}' but found '{}'", c, text_[pos_]));
    }
    ++pos_;
  }

  std::optional<std::string> ident() {
    skip_ws();
    std::size_t start = pos_;
    while (!eof()) {
      char c = text_[pos_];
      if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
          c == '_') {
        ++pos_;
      } else {
        break;
      }
    }
    if (pos_ == start) return std::nullopt;
    char first = text_[start];
    if (first >= '0' && first <= '9') {  // identifiers cannot start with a digit
      pos_ = start;
      return std::nullopt;
    }
    return std::string(text_.substr(start, pos_ - start));
  }

  std::string quoted_string() {
    skip_ws();
    std::size_t start = pos_;
    char quote = text_[pos_++];
    std::string out;
    while (true) {
      if (eof()) {
        fail("unbalanced_delimiters", start, "unterminated string literal");
      }
      char c = text_[pos_++];
      if (c == quote) break;
      if (c == '\\') {
        if (eof()) {
          fail("unbalanced_delimiters", start, "unterminated string literal");
        }
        char esc = text_[pos_++];
        switch (esc) {
          case 'n': out.push_back('\n'); break;
          case 't': out.push_back('\t'); break;
          case 'r': out.push_back('\r'); break;
          case '\\': out.push_back('\\'); break;
          case '\'': out.push_back('\''); break;
          case '"': out.push_back('"'); break;
          default:
            out.push_back('\\');
            out.push_back(esc);
        }
      } else {
        out.push_back(c);
      }
    }
    return out;
  }

  Value number() {
    skip_ws();
    std::size_t start = pos_;
    if (!eof() && (text_[pos_] == '+' || text_[pos_] == '-')) ++pos_;
    bool has_dot = false, has_exp = false, has_digit = false;
    while (!eof()) {
      char c = text_[pos_];
      if (c >= '0' && c <= '9') {
        has_digit = true;
        ++pos_;
      } else if (c == '.' && !has_dot && !has_exp) {
        has_dot = true;
        ++pos_;
      } else if ((c == 'e' || c == 'E') && has_digit && !has_exp) {
        has_exp = true;
        ++pos_;
        if (!eof() && (text_[pos_] == '+' || text_[pos_] == '-')) ++pos_;
      } else {
        break;
      }
    }
    if (!has_digit) {
      fail("syntax", start, "expected a number");
    }
    std::string_view lit = text_.substr(start, pos_ - start);
    if (!has_dot && !has_exp) {
      std::int64_t iv = 0;
      const char* b = lit.data() + (lit.front() == '+' ? 1 : 0);
      auto [p, ec] = std::from_chars(b, lit.data() + lit.size(), iv);
      if (ec == std::errc() && p == lit.data() + lit.size()) return iv;
    }
    double dv = 0.0;
    if (!parse_number(lit, dv)) {
      fail("syntax", start, fmt::format("malformed number \"{}\"", lit));
    }
    return dv;
  }

  std::string_view text() const { return text_; }

 private:
  std::string_view text_;
  std::size_t pos_ = 0;
};

ValueBox box(Value v) { return ValueBox{std::make_shared<Value>(std::move(v))}; }

Ctor parse_ctor(Cursor& cur, int depth);

Value parse_value(Cursor& cur, int depth) {
  if (depth > kMaxDepth) {
    fail("syntax", cur.pos(), "value nesting too deep");
  }
  cur.skip_ws();
  if (cur.eof()) {
    fail("unbalanced_delimiters", cur.pos(), "expected a value but input ended");
  }
  char c = cur.peek();
  if (c == '"' || c == '\'') {
    return cur.quoted_string();
  }
  if (c == '[') {
    cur.expect('[', "syntax");
    std::vector<ValueBox> items;
    cur.skip_ws();
    if (cur.consume(']')) return items;
    while (true) {
      items.push_back(box(parse_value(cur, depth + 1)));
      cur.skip_ws();
      if (cur.consume(',')) {
        cur.skip_ws();
        if (cur.consume(']')) return items;  // tolerate a trailing comma
        continue;
      }
      if (cur.consume(']')) return items;
      if (cur.eof()) {
        fail("unbalanced_delimiters", cur.pos(), "unterminated list");
      }
      fail("syntax", cur.pos(), "expected ',' or ']' in list");
    }
  }
  if (c == '+' || c == '-' || c == '.' || (c >= '0' && c <= '9')) {
    return cur.number();
  }
  std::size_t at = cur.pos();
  if (auto name = cur.ident()) {
    cur.skip_ws();
    if (!cur.eof() && cur.peek() == '(') {
      cur.seek(at);
      return parse_ctor(cur, depth + 1);
    }
    fail("syntax", at, fmt::format("unexpected bare identifier \"{}\"", *name));
  }
  fail("syntax", at, fmt::format("unexpected character '{}'", c));
}

Ctor parse_ctor(Cursor& cur, int depth) {
  if (depth > kMaxDepth) {
    fail("syntax", cur.pos(), "value nesting too deep");
  }
  cur.skip_ws();
  Ctor ctor;
  ctor.offset = cur.pos();
  auto name = cur.ident();
  if (!name) {
    fail("syntax", cur.pos(), "expected a constructor name");
  }
  ctor.name = *name;
  cur.expect('(', "syntax");
  cur.skip_ws();
  if (cur.consume(')')) return ctor;
  while (true) {
    cur.skip_ws();
    std::size_t key_at = cur.pos();
    auto key = cur.ident();
    if (!key) {
      fail("syntax", key_at, "expected a keyword argument name");
    }
    cur.expect('=', "syntax");
    ctor.kvs.emplace_back(*key, box(parse_value(cur, depth + 1)));
    cur.skip_ws();
    if (cur.consume(',')) {
      cur.skip_ws();
      if (cur.consume(')')) return ctor;  // tolerate a trailing comma
      continue;
    }
    if (cur.consume(')')) return ctor;
    if (cur.eof()) {
      fail("unbalanced_delimiters", cur.pos(), "unterminated constructor call");
    }
    fail("syntax", cur.pos(), "expected ',' or ')' in constructor call");
  }
}

// Renders an int/float/string value as step text; anything else is rejected.
std::string render_scalar(const Value& v, std::size_t offset, const char* what) {
  if (const auto* i = std::get_if<std::int64_t>(&v)) return fmt::format("{}", *i);
  if (const auto* d = std::get_if<double>(&v)) return format_double(*d);
  if (const auto* s = std::get_if<std::string>(&v)) return *s;
  fail("bad_value", offset, fmt::format("{} must be an int, float, or string", what));
}

ParsedGraph interpret(const Ctor& root) {
  ParsedGraph result;
  const Value* nodes_v = root.find("nodes");
  if (nodes_v == nullptr) {
    fail("missing_key", root.offset, "constructor lacks required key \"nodes\"");
  }
  const auto* nodes = std::get_if<std::vector<ValueBox>>(nodes_v);
  if (nodes == nullptr) {
    fail("bad_value", root.offset, "\"nodes\" must be a list");
  }
  const Value* answer_v = root.find("final_answer");
  if (answer_v == nullptr) {
    fail("missing_key", root.offset, "constructor lacks required key \"final_answer\"");
  }
  result.graph.final_answer = render_scalar(*answer_v, root.offset, "final_answer");

  std::map<std::int64_t, int> id_to_index;  // id -> latest earlier step index
  for (const ValueBox& entry : *nodes) {
    const auto* node = std::get_if<Ctor>(entry.v.get());
    if (node == nullptr) {
      fail("bad_value", root.offset, "every nodes[] entry must be a ReasoningNode(...)");
    }
    if (node->name != "ReasoningNode") {
      fail("bad_value", node->offset,
           fmt::format("expected ReasoningNode constructor, found \"{}\"", node->name));
    }
    const Value* id_v = node->find("id");
    if (id_v == nullptr) {
      fail("missing_key", node->offset, "node lacks required key \"id\"");
    }
    const auto* id = std::get_if<std::int64_t>(id_v);
    if (id == nullptr) {
      fail("bad_value", node->offset, "node \"id\" must be an integer");
    }
    const Value* desc_v = node->find("description");
    if (desc_v == nullptr) {
      fail("missing_key", node->offset, "node lacks required key \"description\"");
    }
    const auto* desc = std::get_if<std::string>(desc_v);
    if (desc == nullptr) {
      fail("bad_value", node->offset, "node \"description\" must be a string");
    }
    const Value* out_v = node->find("output");
    if (out_v == nullptr) {
      fail("missing_key", node->offset, "node lacks required key \"output\"");
    }

    Step step;
    step.index = static_cast<int>(result.graph.steps.size());
    step.edge_text = *desc;
    step.node_text = render_scalar(*out_v, node->offset, "node \"output\"");

    if (const Value* deps_v = node->find("depends_on")) {
      const auto* deps = std::get_if<std::vector<ValueBox>>(deps_v);
      if (deps == nullptr) {
        fail("bad_value", node->offset, "node \"depends_on\" must be a list of integers");
      }
      for (const ValueBox& dep_box : *deps) {
        const auto* dep_id = std::get_if<std::int64_t>(dep_box.v.get());
        if (dep_id == nullptr) {
          fail("bad_value", node->offset, "node \"depends_on\" must be a list of integers");
        }
        auto it = id_to_index.find(*dep_id);
        if (it == id_to_index.end()) {
          // Unknown id, or a node that only appears later in the list.
          result.warnings.push_back(
              {"dropped_dependency",
               {{"step", step.index}, {"ref_id", *dep_id}}});
          continue;
        }
        if (std::find(step.depends_on.begin(), step.depends_on.end(), it->second) ==
            step.depends_on.end()) {
          step.depends_on.push_back(it->second);
        }
      }
    }
    id_to_index[*id] = step.index;
    result.graph.steps.push_back(std::move(step));
  }
  return result;
}

}  // namespace

ParsedGraph parse_structured(std::string_view text) {
  static constexpr std::string_view kName = "ReasoningGraph";
  std::vector<std::size_t> candidates;
  for (std::size_t at = text.find(kName); at != std::string_view::npos;
       at = text.find(kName, at + 1)) {
    std::size_t after = at + kName.size();
    // Reject identifiers that merely contain the name (e.g. "ReasoningGraphX").
    if (after < text.size()) {
      char c = text[after];
      if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
          c == '_') {
        continue;
      }
    }
    Cursor probe(text);
    probe.seek(after);
    probe.skip_ws();
    if (!probe.eof() && probe.peek() == '(') candidates.push_back(at);
  }
  if (candidates.empty()) {
    fail("no_constructor", 0, "no ReasoningGraph(...) constructor expression found");
  }
  std::optional<Error> first_error;
  for (std::size_t at : candidates) {
    try {
      Cursor cur(text);
      cur.seek(at);
      Ctor root = parse_ctor(cur, 0);
      return interpret(root);
    } catch (const Error& e) {
      if (!first_error) first_error = e;
    }
  }
  throw *first_error;
}

ReasoningGraph parse_linear(std::span<const std::string> sentences) {
  ReasoningGraph graph;
  for (const std::string& sentence : sentences) {
    if (trim(sentence).empty()) continue;
    Step step;
    step.index = static_cast<int>(graph.steps.size());
    step.edge_text = sentence;
    step.node_text = "";  // linear sentinel: sentences carry no separate result
    if (step.index > 0) step.depends_on.push_back(step.index - 1);
    graph.steps.push_back(std::move(step));
  }
  if (graph.steps.empty()) {
    throw Error(ErrKind::Data, "empty_input", "no non-empty sentences to parse");
  }
  return graph;
}

}  // namespace stepconf
