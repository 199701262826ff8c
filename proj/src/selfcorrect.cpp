#include "stepconf/selfcorrect.hpp"

#include <algorithm>
#include <numeric>

#include <fmt/format.h>
#include <httplib.h>
#include <json.hpp>

#include "stepconf/error.hpp"
#include "stepconf/parser.hpp"
#include "stepconf/text.hpp"

namespace stepconf {

namespace {

// Structured-response prompt; {question} is substituted at build time.
constexpr std::string_view kBasePrompt =
    R"tmpl(Please respond to the last INPUT_OBJECT with OUTPUT_OBJECT according to OUTPUT_TYPE.
INSTRUCTIONS:
- Do NOT define or repeat any class or function.
- ONLY produce an OUTPUT_OBJECT that instantiates the OUTPUT_TYPE.
- The output must be valid Python using the given type names.
- Do NOT generate code, explanation, or helper variables.
- Only output an object like ReasoningGraph(...).

INPUT_OBJECT:
  1 + 1 =
OUTPUT_TYPE:
  Answer
  ```python
  class Answer:
    final_answer: int
  ```
OUTPUT_OBJECT:
  ```python
  Answer(
    final_answer=2
  )
  ```
INPUT_OBJECT:
{question}
OUTPUT_TYPE:
ReasoningGraph
```python
class ReasoningNode:
  id: int
  description: str
  output: Union[int, float, str]
  depends_on: list[int]

class ReasoningGraph:
  nodes: list[ReasoningNode]
  final_answer: Union[int, float, str]
```
OUTPUT_OBJECT:)tmpl";

constexpr std::string_view kAnswerSuffix =
    R"tmpl(# NOTE: The previous final answer '{answer}' is incorrect.
Please regenerate the OUTPUT_OBJECT only.
Do not provide any reasoning, explanation, or extra text.
The OUTPUT_TYPE remains ReasoningGraph.)tmpl";

constexpr std::string_view kStepwiseSuffix =
    R"tmpl(# FEEDBACK:
The previous final answer '{previous_answer}' is incorrect.

## Reasoning Process:
{reasoning_process}

## Identified Errors (steps with low confidence):
{error_description}

Do not follow the identified error steps. Please reanalyze and regenerate a correct final answer that is different from the previous incorrect answer which is {previous_answer}. Return only the ReasoningGraph object without any explanations.)tmpl";

constexpr std::string_view kNoFlaggedSteps =
    "No steps were flagged below the confidence threshold.";

std::string replace_all(std::string text, std::string_view needle, std::string_view value) {
  std::size_t pos = 0;
  while ((pos = text.find(needle, pos)) != std::string::npos) {
    text.replace(pos, needle.size(), value);
    pos += value.size();
  }
  return text;
}

std::vector<int> flag_steps(std::span<const double> confidences, const FeedbackConfig& config) {
  std::vector<int> flagged;
  if (config.mode == FlagMode::Threshold) {
    for (std::size_t j = 0; j < confidences.size(); ++j) {
      if (confidences[j] < config.tau_c) flagged.push_back(static_cast<int>(j));
    }
    return flagged;
  }
  std::vector<int> order(confidences.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return confidences[static_cast<std::size_t>(a)] < confidences[static_cast<std::size_t>(b)];
  });
  const auto k = std::min<std::size_t>(static_cast<std::size_t>(config.bottom_k), order.size());
  flagged.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(flagged.begin(), flagged.end());
  return flagged;
}

}  // namespace

void FeedbackConfig::validate_or_throw() const {
  if (!(tau_c > 0.0 && tau_c < 1.0)) {
    throw Error(ErrKind::Usage, "bad_threshold", "the confidence threshold must lie in (0, 1)");
  }
  if (bottom_k < 1) {
    throw Error(ErrKind::Usage, "bad_bottom_k", "bottom_k must be positive");
  }
}

std::string base_structured_prompt(std::string_view question) {
  return replace_all(std::string(kBasePrompt), "{question}", question);
}

std::string build_answer_feedback(std::string_view question, std::string_view previous_answer) {
  if (question.empty() || previous_answer.empty()) {
    throw Error(ErrKind::Usage, "empty_prompt_input",
                "answer feedback needs a question and a previous answer");
  }
  return base_structured_prompt(question) + "\n\n" +
         replace_all(std::string(kAnswerSuffix), "{answer}", previous_answer);
}

FeedbackItem make_answer_item(std::string_view question, std::string_view previous_answer) {
  FeedbackItem item;
  item.question_text = std::string(question);
  item.previous_answer = std::string(previous_answer);
  item.built_prompt = build_answer_feedback(question, previous_answer);
  return item;
}

std::string render_reasoning(const ReasoningGraph& graph) {
  std::string out;
  for (const Step& step : graph.steps) {
    if (!out.empty()) out += '\n';
    if (step.node_text.empty()) {
      out += fmt::format("Step {}: {}", step.index, step.edge_text);
    } else {
      out += fmt::format("Step {}: {} => {}", step.index, step.edge_text, step.node_text);
    }
  }
  return out;
}

FeedbackItem build_stepwise_feedback(std::string_view question, const ReasoningGraph& graph,
                                     std::span<const double> confidences,
                                     const FeedbackConfig& config) {
  config.validate_or_throw();
  if (confidences.size() != graph.steps.size()) {
    throw Error(ErrKind::Data, "length_mismatch",
                fmt::format("{} confidences for {} steps", confidences.size(),
                            graph.steps.size()),
                {{"trajectory_id", graph.trajectory_id}});
  }

  FeedbackItem item;
  item.question_text = std::string(question);
  item.previous_answer = graph.final_answer;
  item.reasoning_rendering = render_reasoning(graph);
  item.flagged_steps = flag_steps(confidences, config);

  std::string errors;
  if (item.flagged_steps.empty()) {
    errors = kNoFlaggedSteps;
  } else {
    for (int j : item.flagged_steps) {
      if (!errors.empty()) errors += '\n';
      errors += fmt::format("Step {}: confidence {:.3f}", j,
                            confidences[static_cast<std::size_t>(j)]);
    }
  }

  std::string suffix = replace_all(std::string(kStepwiseSuffix), "{previous_answer}",
                                   item.previous_answer);
  suffix = replace_all(std::move(suffix), "{reasoning_process}", item.reasoning_rendering);
  suffix = replace_all(std::move(suffix), "{error_description}", errors);
  item.built_prompt = base_structured_prompt(question) + "\n\n" + suffix;
  return item;
}

void MockLlmClient::script(std::string prompt, std::string response) {
  scripted_[std::move(prompt)] = std::move(response);
}

void MockLlmClient::set_rule(std::function<std::string(const std::string&)> rule) {
  rule_ = std::move(rule);
}

std::string MockLlmClient::send(const std::string& prompt) {
  ++calls_;
  if (auto it = scripted_.find(prompt); it != scripted_.end()) return it->second;
  if (rule_) return rule_(prompt);
  throw Error(ErrKind::Provider, "unscripted_prompt", "the mock has no response for this prompt");
}

struct HttpChatClient::Impl {
  HttpChatConfig config;
  httplib::Client client;

  explicit Impl(HttpChatConfig cfg) : config(std::move(cfg)), client(config.base_url) {
    client.set_connection_timeout(0, config.timeout_ms * 1000);
    client.set_read_timeout(config.timeout_ms / 1000, (config.timeout_ms % 1000) * 1000);
    client.set_write_timeout(config.timeout_ms / 1000, (config.timeout_ms % 1000) * 1000);
  }

  std::string call(const std::string& prompt) {
    nlohmann::json body{{"model", config.model},
                        {"messages", nlohmann::json::array({nlohmann::json{
                                         {"role", "user"}, {"content", prompt}}})},
                        {"temperature", 1.0}};
    const std::string payload = body.dump();
    std::string last_failure;
    for (int attempt = 0; attempt < 2; ++attempt) {  // initial try + one retry
      auto res = client.Post(config.path, payload, "application/json");
      if (!res) {
        last_failure = fmt::format("transport error: {}", httplib::to_string(res.error()));
        continue;
      }
      if (res->status != 200) {
        last_failure = fmt::format("http status {}", res->status);
        continue;
      }
      nlohmann::json reply = nlohmann::json::parse(res->body, nullptr, false);
      if (reply.is_discarded() || !reply.is_object() || !reply.contains("choices") ||
          !reply["choices"].is_array() || reply["choices"].empty()) {
        last_failure = "malformed chat response";
        continue;
      }
      const nlohmann::json& choice = reply["choices"][0];
      if (choice.contains("message") && choice["message"].is_object() &&
          choice["message"].contains("content") && choice["message"]["content"].is_string()) {
        return choice["message"]["content"].get<std::string>();
      }
      if (choice.contains("text") && choice["text"].is_string()) {
        return choice["text"].get<std::string>();
      }
      last_failure = "chat response carries no text";
    }
    throw Error(ErrKind::Provider, "chat_transport",
                "chat completion failed after retry: " + last_failure,
                {{"retryable", true}, {"url", config.base_url + config.path}});
  }
};

HttpChatClient::HttpChatClient(HttpChatConfig config)
    : impl_(std::make_unique<Impl>(std::move(config))) {}

HttpChatClient::~HttpChatClient() = default;

std::string HttpChatClient::send(const std::string& prompt) { return impl_->call(prompt); }

bool default_answer_equal(std::string_view a, std::string_view b) {
  if (canonical_text(a) == canonical_text(b)) return true;
  double x = 0.0, y = 0.0;
  return parse_number(trim(a), x) && parse_number(trim(b), y) && x == y;
}

std::vector<CorrectionOutcome> run_round(LlmClient& client, std::span<const FeedbackItem> items,
                                         std::span<const std::string> gold_answers,
                                         const AnswerEqual& answer_equal) {
  if (items.size() != gold_answers.size()) {
    throw Error(ErrKind::Usage, "length_mismatch",
                fmt::format("{} items for {} gold answers", items.size(), gold_answers.size()));
  }
  std::vector<CorrectionOutcome> outcomes;
  outcomes.reserve(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    CorrectionOutcome outcome;
    std::string reply;
    try {
      reply = client.send(items[i].built_prompt);
    } catch (const Error& err) {
      outcome.diagnostic = fmt::format("client failure {}: {}", err.code(), err.what());
      outcomes.push_back(std::move(outcome));
      continue;
    }
    try {
      ParsedGraph parsed = parse_structured(reply);
      outcome.new_answer = parsed.graph.final_answer;
      outcome.corrected = answer_equal(outcome.new_answer, gold_answers[i]);
    } catch (const Error& err) {
      outcome.diagnostic = fmt::format("unparseable reply {}: {}", err.code(), err.what());
    }
    outcomes.push_back(std::move(outcome));
  }
  return outcomes;
}

double success_rate(std::span<const CorrectionOutcome> outcomes) {
  if (outcomes.empty()) {
    throw Error(ErrKind::Data, "no_outcomes", "success rate needs at least one outcome");
  }
  long long corrected = 0;
  for (const CorrectionOutcome& outcome : outcomes) corrected += outcome.corrected ? 1 : 0;
  return static_cast<double>(corrected) / static_cast<double>(outcomes.size());
}

}  // namespace stepconf
