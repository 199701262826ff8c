#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "stepconf/error.hpp"
#include "stepconf/selfcorrect.hpp"
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

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

Step step(int index, std::string edge, std::string node, std::vector<int> deps = {}) {
  Step s;
  s.index = index;
  s.edge_text = std::move(edge);
  s.node_text = std::move(node);
  s.depends_on = std::move(deps);
  return s;
}

// The worked division example used by the frozen prompt files.
ReasoningGraph division_graph() {
  ReasoningGraph g;
  g.trajectory_id = "t00";
  g.steps.push_back(step(0, "recall that 12 = 4 * 3", "12 = 4 * 3"));
  g.steps.push_back(step(1, "conclude the quotient", "5", {0}));
  g.final_answer = "5";
  return g;
}

std::string graph_reply(const std::string& answer) {
  return "ReasoningGraph(nodes=[ReasoningNode(id=0, description='redo the work', output='" +
         answer + "', depends_on=[])], final_answer='" + answer + "')";
}

struct ChatServer {
  httplib::Server server;
  std::thread thread;
  int port = 0;
  std::atomic<int> hits{0};
  std::atomic<int> fail_first{0};
  bool legacy_text_field = false;  // respond with choices[0].text instead
  nlohmann::json last_request;
  std::string reply = "pong";

  ChatServer() {
    server.Post("/v1/chat/completions",
                [this](const httplib::Request& req, httplib::Response& res) {
                  ++hits;
                  last_request = nlohmann::json::parse(req.body, nullptr, false);
                  if (fail_first.fetch_sub(1) > 0) {
                    res.status = 500;
                    return;
                  }
                  nlohmann::json choice =
                      legacy_text_field
                          ? nlohmann::json{{"text", reply}}
                          : nlohmann::json{{"message", nlohmann::json{{"role", "assistant"},
                                                                      {"content", reply}}}};
                  res.set_content(
                      nlohmann::json{{"choices", nlohmann::json::array({choice})}}.dump(),
                      "application/json");
                });
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~ChatServer() {
    server.stop();
    thread.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port); }
};

}  // namespace

TEST_CASE("answer feedback prompt matches the frozen file byte for byte") {
  const FeedbackItem item = make_answer_item("What is 12 / 4?", "5");
  CHECK(item.built_prompt == read_file(std::string(STEPCONF_GOLDEN_DIR) + "/answer_feedback.txt"));
  CHECK(item.question_text == "What is 12 / 4?");
  CHECK(item.previous_answer == "5");
  CHECK(item.reasoning_rendering.empty());
  CHECK(item.flagged_steps.empty());
}

TEST_CASE("stepwise feedback prompt matches the frozen file byte for byte") {
  const ReasoningGraph g = division_graph();
  const std::vector<double> confidences{0.91, 0.12};
  const FeedbackItem item = build_stepwise_feedback("What is 12 / 4?", g, confidences);
  CHECK(item.built_prompt ==
        read_file(std::string(STEPCONF_GOLDEN_DIR) + "/stepwise_feedback.txt"));
  CHECK(item.previous_answer == "5");
  CHECK(item.flagged_steps == std::vector<int>{1});
  CHECK(item.built_prompt.find("Step 1: confidence 0.120") != std::string::npos);
}

TEST_CASE("prompts assemble from the base and the mode suffix") {
  const std::string base = base_structured_prompt("Q?");
  CHECK(base.find("Q?") != std::string::npos);
  const std::string built = build_answer_feedback("Q?", "7");
  CHECK(built.substr(0, base.size()) == base);
  CHECK(built.substr(base.size(), 2) == "\n\n");
  CHECK(built.back() != '\n');
  CHECK(built.find("'7' is incorrect") != std::string::npos);
}

TEST_CASE("reasoning rendering omits the arrow for empty node text") {
  ReasoningGraph g;
  g.trajectory_id = "t00";
  g.steps.push_back(step(0, "add one", "2"));
  g.steps.push_back(step(1, "halve it", "", {0}));
  CHECK(render_reasoning(g) == "Step 0: add one => 2\nStep 1: halve it");
  CHECK(render_reasoning(ReasoningGraph{}).empty());
}

TEST_CASE("threshold flagging is strict") {
  ReasoningGraph g;
  g.trajectory_id = "t00";
  g.steps.push_back(step(0, "claim a", "x"));
  g.steps.push_back(step(1, "claim b", "y", {0}));
  g.final_answer = "y";

  FeedbackConfig config;  // tau 0.5, Threshold
  // Exactly at the threshold: not flagged.
  const FeedbackItem at = build_stepwise_feedback("Q?", g, std::vector<double>{0.5, 0.5}, config);
  CHECK(at.flagged_steps.empty());
  CHECK(at.built_prompt.find("No steps were flagged below the confidence threshold.") !=
        std::string::npos);

  const FeedbackItem below =
      build_stepwise_feedback("Q?", g, std::vector<double>{0.49, 0.51}, config);
  CHECK(below.flagged_steps == std::vector<int>{0});
  CHECK(below.built_prompt.find("Step 0: confidence 0.490") != std::string::npos);
}

TEST_CASE("bottom-k flagging breaks ties by step index") {
  ReasoningGraph g;
  g.trajectory_id = "t00";
  for (int j = 0; j < 4; ++j) {
    g.steps.push_back(step(j, "claim " + std::to_string(j), "v",
                           j == 0 ? std::vector<int>{} : std::vector<int>{j - 1}));
  }
  g.final_answer = "v";

  FeedbackConfig config;
  config.mode = FlagMode::BottomK;
  config.bottom_k = 2;
  const FeedbackItem two =
      build_stepwise_feedback("Q?", g, std::vector<double>{0.3, 0.1, 0.3, 0.2}, config);
  CHECK(two.flagged_steps == std::vector<int>{1, 3});

  const FeedbackItem tied =
      build_stepwise_feedback("Q?", g, std::vector<double>{0.2, 0.2, 0.2, 0.2}, config);
  CHECK(tied.flagged_steps == std::vector<int>{0, 1});

  config.bottom_k = 9;  // more than there are steps
  const FeedbackItem all =
      build_stepwise_feedback("Q?", g, std::vector<double>{0.4, 0.3, 0.2, 0.1}, config);
  CHECK(all.flagged_steps == std::vector<int>{0, 1, 2, 3});
}

TEST_CASE("feedback input validation") {
  FeedbackConfig config;
  config.tau_c = 0.0;
  CHECK(error_code([&] { config.validate_or_throw(); }) == "bad_threshold");
  config.tau_c = 1.0;
  CHECK(error_code([&] { config.validate_or_throw(); }) == "bad_threshold");
  config = FeedbackConfig{};
  config.bottom_k = 0;
  CHECK(error_code([&] { config.validate_or_throw(); }) == "bad_bottom_k");

  CHECK(error_code([] { make_answer_item("", "5"); }) == "empty_prompt_input");
  CHECK(error_code([] { make_answer_item("Q?", ""); }) == "empty_prompt_input");

  const ReasoningGraph g = division_graph();
  const std::vector<double> short_conf{0.9};
  CHECK(error_code([&] { build_stepwise_feedback("Q?", g, short_conf); }) == "length_mismatch");
  try {
    build_stepwise_feedback("Q?", g, short_conf);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrKind::Data);
  }
}

TEST_CASE("default answer equality") {
  CHECK(default_answer_equal("2", "2.0"));
  CHECK(default_answer_equal(" 42 ", "42"));
  CHECK(default_answer_equal("Paris", "paris"));
  CHECK(default_answer_equal("1e2", "100"));
  CHECK(default_answer_equal("-0.5", "-.5"));
  CHECK(!default_answer_equal("abc", "abd"));
  CHECK(!default_answer_equal("3", "4"));
  CHECK(!default_answer_equal("", "0"));
}

TEST_CASE("the mock client replays scripts and counts calls") {
  MockLlmClient mock;
  mock.script("ping", "pong");
  CHECK(mock.send("ping") == "pong");
  CHECK(error_code([&] { mock.send("other"); }) == "unscripted_prompt");
  mock.set_rule([](const std::string& prompt) { return "echo:" + prompt; });
  CHECK(mock.send("other") == "echo:other");
  CHECK(mock.send("ping") == "pong");  // scripts still win over the rule
  CHECK(mock.calls() == 4);
}

TEST_CASE("a correction round classifies every item without aborting") {
  const FeedbackItem good = make_answer_item("What is 2 + 2?", "5");
  const FeedbackItem garbled = make_answer_item("What is 3 + 3?", "7");
  const FeedbackItem dropped = make_answer_item("What is 4 + 4?", "9");
  MockLlmClient mock;
  mock.script(good.built_prompt, graph_reply("4"));
  mock.script(garbled.built_prompt, "this is not a structured reply");
  // `dropped` stays unscripted: the client raises a provider error.

  const std::vector<FeedbackItem> items{good, garbled, dropped};
  const std::vector<std::string> golds{"4", "6", "8"};
  const auto outcomes = run_round(mock, items, golds);
  REQUIRE(outcomes.size() == 3);
  CHECK(mock.calls() == 3);

  CHECK(outcomes[0].corrected);
  CHECK(outcomes[0].new_answer == "4");
  CHECK(outcomes[0].initially_wrong);
  CHECK(!outcomes[0].diagnostic.has_value());

  CHECK(!outcomes[1].corrected);
  REQUIRE(outcomes[1].diagnostic.has_value());
  CHECK(outcomes[1].diagnostic->find("unparseable reply") != std::string::npos);

  CHECK(!outcomes[2].corrected);
  REQUIRE(outcomes[2].diagnostic.has_value());
  CHECK(outcomes[2].diagnostic->find("client failure unscripted_prompt") != std::string::npos);

  CHECK(success_rate(outcomes) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("correction rounds validate their inputs") {
  MockLlmClient mock;
  const std::vector<FeedbackItem> items{make_answer_item("Q?", "1")};
  const std::vector<std::string> golds{"1", "2"};
  CHECK(error_code([&] { run_round(mock, items, golds); }) == "length_mismatch");
  CHECK(error_code([] { success_rate({}); }) == "no_outcomes");
}

TEST_CASE("a custom answer comparator overrides the default") {
  const FeedbackItem item = make_answer_item("Q?", "1");
  MockLlmClient mock;
  mock.script(item.built_prompt, graph_reply("totally different"));
  const std::vector<FeedbackItem> items{item};
  const std::vector<std::string> golds{"42"};
  const auto outcomes =
      run_round(mock, items, golds, [](std::string_view, std::string_view) { return true; });
  REQUIRE(outcomes.size() == 1);
  CHECK(outcomes[0].corrected);
  CHECK(outcomes[0].new_answer == "totally different");
}

TEST_CASE("the chat client posts one user message at temperature one") {
  ChatServer srv;
  srv.reply = "hello back";
  HttpChatConfig config;
  config.base_url = srv.url();
  HttpChatClient client(config);
  CHECK(client.send("hello there") == "hello back");
  CHECK(srv.last_request.at("model") == "default");
  CHECK(srv.last_request.at("temperature") == 1.0);
  REQUIRE(srv.last_request.at("messages").size() == 1);
  CHECK(srv.last_request["messages"][0].at("role") == "user");
  CHECK(srv.last_request["messages"][0].at("content") == "hello there");
}

TEST_CASE("the chat client retries once and accepts the legacy text field") {
  ChatServer srv;
  srv.reply = "second try";
  srv.fail_first = 1;
  HttpChatConfig config;
  config.base_url = srv.url();
  HttpChatClient client(config);
  CHECK(client.send("x") == "second try");
  CHECK(srv.hits == 2);

  srv.legacy_text_field = true;
  CHECK(client.send("y") == "second try");
}

TEST_CASE("a dead endpoint raises a retryable provider error") {
  HttpChatConfig config;
  config.base_url = "http://127.0.0.1:9";  // discard port: nothing listens
  config.timeout_ms = 250;
  HttpChatClient client(config);
  try {
    client.send("anyone?");
    FAIL("expected a transport error");
  } catch (const Error& e) {
    CHECK(e.code() == "chat_transport");
    CHECK(e.kind() == ErrKind::Provider);
    CHECK(e.detail().value("retryable", false));
  }
}
