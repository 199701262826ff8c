#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "stepconf/trace.hpp"

namespace stepconf {

enum class FlagMode { Threshold, BottomK };

struct FeedbackConfig {
  double tau_c = 0.5;  // steps below this confidence are flagged
  FlagMode mode = FlagMode::Threshold;
  int bottom_k = 1;  // BottomK mode: flag the k least confident steps

  void validate_or_throw() const;  // Error{Usage}
};

struct FeedbackItem {
  std::string question_text;
  std::string previous_answer;
  std::string reasoning_rendering;  // numbered step lines
  std::vector<int> flagged_steps;   // ascending step indices
  std::string built_prompt;
};

// The structured-response prompt with the question substituted; every built
// feedback prompt starts with it.
std::string base_structured_prompt(std::string_view question);

// Base prompt plus the answer-level feedback note. Inputs must be non-empty.
std::string build_answer_feedback(std::string_view question, std::string_view previous_answer);

// Answer-level FeedbackItem: no rendered reasoning, nothing flagged.
FeedbackItem make_answer_item(std::string_view question, std::string_view previous_answer);

// "Step j: <edge_text> => <node_text>" per step; the arrow part is omitted for
// the empty node-text sentinel.
std::string render_reasoning(const ReasoningGraph& graph);

// Base prompt plus the stepwise feedback block: rendered reasoning, flagged
// steps with confidences to three decimals, and the previous answer repeated
// in the regeneration clause.
FeedbackItem build_stepwise_feedback(std::string_view question, const ReasoningGraph& graph,
                                     std::span<const double> confidences,
                                     const FeedbackConfig& config = {});

class LlmClient {
 public:
  virtual ~LlmClient() = default;
  // Returns the raw completion text; throws Error{Provider} on failure.
  virtual std::string send(const std::string& prompt) = 0;
};

class MockLlmClient final : public LlmClient {
 public:
  void script(std::string prompt, std::string response);
  void set_rule(std::function<std::string(const std::string&)> rule);
  std::string send(const std::string& prompt) override;
  long long calls() const { return calls_; }

 private:
  std::map<std::string, std::string> scripted_;
  std::function<std::string(const std::string&)> rule_;
  long long calls_ = 0;
};

struct HttpChatConfig {
  std::string base_url;  // e.g. "http://127.0.0.1:8080"
  std::string path = "/v1/chat/completions";
  std::string model = "default";
  int timeout_ms = 30000;
};

// Minimal chat-completions client: posts the prompt as a single user message
// at temperature 1.0 and reads the first choice. One retry per call.
class HttpChatClient final : public LlmClient {
 public:
  explicit HttpChatClient(HttpChatConfig config);
  ~HttpChatClient() override;
  std::string send(const std::string& prompt) override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct CorrectionOutcome {
  bool initially_wrong = true;  // the pipeline only sees initially wrong items
  bool corrected = false;
  std::string new_answer;
  std::optional<std::string> diagnostic;  // transport or parse failure note
};

// Canonicalized text equality, or numeric equality when both sides parse.
bool default_answer_equal(std::string_view a, std::string_view b);

using AnswerEqual = std::function<bool(std::string_view, std::string_view)>;

// One regeneration attempt per item: send the built prompt, parse the reply
// as a structured graph, compare its final answer with the gold one. Client
// and parse failures yield corrected=false with a diagnostic, never abort the
// batch.
std::vector<CorrectionOutcome> run_round(LlmClient& client, std::span<const FeedbackItem> items,
                                         std::span<const std::string> gold_answers,
                                         const AnswerEqual& answer_equal = default_answer_equal);

// Fraction of outcomes marked corrected; at least one outcome required.
double success_rate(std::span<const CorrectionOutcome> outcomes);

}  // namespace stepconf
