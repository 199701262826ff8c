#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

using nlohmann::json;

namespace {

struct CliResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  REQUIRE(out.good());
  out << content;
}

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("stepconf-cli-" + std::to_string(::getpid()) + "-" + std::to_string(counter()++));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

CliResult run_cli(const std::string& args, const TempDir& dir) {
  static int invocation = 0;
  const char* bin = std::getenv("STEPCONF_BIN");
  REQUIRE(bin != nullptr);
  const auto out_path = dir.path / ("cli-out-" + std::to_string(invocation) + ".txt");
  const auto err_path = dir.path / ("cli-err-" + std::to_string(invocation) + ".txt");
  ++invocation;
  const std::string command = std::string("\"") + bin + "\" " + args + " > \"" +
                              out_path.string() + "\" 2> \"" + err_path.string() + "\"";
  const int status = std::system(command.c_str());
  CliResult result;
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  result.out = read_file(out_path);
  result.err = read_file(err_path);
  return result;
}

// First stderr line that parses as a JSON object carrying `key`; notes and
// error diagnostics share the stream, so callers name the field they expect.
json diagnostic_with(const std::string& err, const std::string& key) {
  std::istringstream lines(err);
  std::string line;
  while (std::getline(lines, line)) {
    json j = json::parse(line, nullptr, false);
    if (!j.is_discarded() && j.is_object() && j.contains(key)) return j;
  }
  return json();
}

std::string synth_config(int questions, int anchors, int correct, int wrong) {
  return json{{"synth",
               {{"num_questions", questions},
                {"anchors_per_question", anchors},
                {"correct_per_question", correct},
                {"wrong_per_question", wrong},
                {"distractor_rate", 0.0}}}}
      .dump();
}

}  // namespace

TEST_CASE("usage errors exit with code 1 and a json diagnostic") {
  TempDir dir;
  const CliResult none = run_cli("", dir);
  CHECK(none.exit_code == 1);
  CHECK(diagnostic_with(none.err, "code").contains("code"));

  const CliResult unknown = run_cli("frobnicate", dir);
  CHECK(unknown.exit_code == 1);

  const CliResult help = run_cli("--help", dir);
  CHECK(help.exit_code == 0);
  CHECK(help.out.find("synth") != std::string::npos);
}

TEST_CASE("a missing input file exits with code 2") {
  TempDir dir;
  const CliResult r =
      run_cli("nibs --corpus " + dir.file("absent.json") + " --out " + dir.file("x.jsonl"), dir);
  CHECK(r.exit_code == 2);
  const json diag = diagnostic_with(r.err, "code");
  CHECK(diag.at("code") == "file_open");
  CHECK(diag.at("kind") == "io");
}

TEST_CASE("synthesis is deterministic and the pipeline separates planted errors") {
  TempDir dir;
  write_file(dir.file("cfg.json"), synth_config(2, 3, 2, 2));

  const CliResult synth = run_cli(
      "synth --config " + dir.file("cfg.json") + " --out " + dir.file("corpus.json") + " --seed 7",
      dir);
  REQUIRE(synth.exit_code == 0);
  const json synth_note = json::parse(synth.out);
  CHECK(synth_note.at("questions") == 2);
  CHECK(synth_note.at("trajectories") == 8);

  const CliResult again = run_cli(
      "synth --config " + dir.file("cfg.json") + " --out " + dir.file("again.json") + " --seed 7",
      dir);
  REQUIRE(again.exit_code == 0);
  CHECK(read_file(dir.file("corpus.json")) == read_file(dir.file("again.json")));

  const CliResult nibs = run_cli(
      "nibs --corpus " + dir.file("corpus.json") + " --out " + dir.file("scores.jsonl"), dir);
  REQUIRE(nibs.exit_code == 0);
  std::istringstream rows(read_file(dir.file("scores.jsonl")));
  std::string line;
  REQUIRE(std::getline(rows, line));
  const json row = json::parse(line);
  CHECK(row.at("question_id") == "s7-q000");
  CHECK(row.at("trajectory_id") == "t00");
  CHECK(row.at("scores").is_array());

  const CliResult eval = run_cli("eval --scores " + dir.file("scores.jsonl") + " --corpus " +
                                     dir.file("corpus.json") + " --out " + dir.file("report.json"),
                                 dir);
  REQUIRE(eval.exit_code == 0);
  const json report = json::parse(read_file(dir.file("report.json")));
  CHECK(report.at("auroc") == 1.0);
  CHECK(report.at("positives") < report.at("n"));

  const CliResult prefix = run_cli("eval --first-error --scores " + dir.file("scores.jsonl") +
                                       " --corpus " + dir.file("corpus.json") + " --out " +
                                       dir.file("prefix.json"),
                                   dir);
  REQUIRE(prefix.exit_code == 0);
  const json prefix_report = json::parse(read_file(dir.file("prefix.json")));
  CHECK(prefix_report.at("auroc") == 1.0);
  CHECK(prefix_report.at("n") < report.at("n"));  // suffixes after errors are dropped
}

TEST_CASE("eval with no joinable scores exits with code 2") {
  TempDir dir;
  write_file(dir.file("cfg.json"), synth_config(1, 3, 1, 1));
  REQUIRE(run_cli("synth --config " + dir.file("cfg.json") + " --out " + dir.file("corpus.json"),
                  dir)
              .exit_code == 0);
  write_file(dir.file("orphan.jsonl"),
             json{{"question_id", "zzz"}, {"trajectory_id", "zzz"}, {"scores", {0.5}}}.dump() +
                 "\n");
  const CliResult r = run_cli("eval --scores " + dir.file("orphan.jsonl") + " --corpus " +
                                  dir.file("corpus.json") + " --out " + dir.file("report.json"),
                              dir);
  CHECK(r.exit_code == 2);
  CHECK(diagnostic_with(r.err, "code").at("code") == "no_labeled_scores");
}

TEST_CASE("structured and linear parsing") {
  TempDir dir;
  write_file(dir.file("reply.txt"),
             "Sure, here you go:\n"
             "ReasoningGraph(nodes=[ReasoningNode(id=0, description='recall the rule', "
             "output='rule', depends_on=[]), ReasoningNode(id=1, description='apply it', "
             "output='8', depends_on=[0])], final_answer='8')\n");
  const CliResult structured =
      run_cli("parse --in " + dir.file("reply.txt") + " --out " + dir.file("parsed.json"), dir);
  REQUIRE(structured.exit_code == 0);
  CHECK(diagnostic_with(structured.err, "steps").at("steps") == 2);
  const json corpus = json::parse(read_file(dir.file("parsed.json")));
  REQUIRE(corpus.at("questions").size() == 1);
  const json& traj = corpus["questions"][0]["trajectories"][0];
  CHECK(traj.at("final_answer") == "8");
  CHECK(traj.at("steps").size() == 2);
  CHECK(traj["steps"][1]["depends_on"] == json::array({0}));

  write_file(dir.file("chain.txt"), "First compute the sum.\n\nThen halve it.\n");
  const CliResult linear = run_cli(
      "parse --linear --in " + dir.file("chain.txt") + " --out " + dir.file("chain.json"), dir);
  REQUIRE(linear.exit_code == 0);
  const json chain = json::parse(read_file(dir.file("chain.json")));
  const json& steps = chain["questions"][0]["trajectories"][0]["steps"];
  REQUIRE(steps.size() == 2);
  CHECK(steps[0]["node_text"] == "");
  CHECK(steps[1]["depends_on"] == json::array({0}));

  write_file(dir.file("junk.txt"), "there is no graph in this text at all\n");
  const CliResult bad =
      run_cli("parse --in " + dir.file("junk.txt") + " --out " + dir.file("none.json"), dir);
  CHECK(bad.exit_code == 2);
  const json diag = diagnostic_with(bad.err, "code");
  CHECK(diag.at("code") == "no_constructor");
  CHECK(diag.at("kind") == "data");
}

TEST_CASE("graph matching subcommands") {
  TempDir dir;
  write_file(dir.file("cfg.json"), synth_config(1, 3, 2, 1));
  REQUIRE(run_cli("synth --config " + dir.file("cfg.json") + " --out " + dir.file("corpus.json") +
                      " --seed 5",
                  dir)
              .exit_code == 0);

  const CliResult mcs = run_cli(
      "mcs --g1 " + dir.file("corpus.json") + " --g2 " + dir.file("corpus.json"), dir);
  REQUIRE(mcs.exit_code == 0);
  const json match = json::parse(mcs.out);
  CHECK(match.at("size").get<int>() >= 3);
  CHECK(match.at("sim_call_count").get<long long>() ==
        match.at("size").get<long long>() * match.at("size").get<long long>());
  CHECK(match.at("node_mapping").contains("-1"));

  const CliResult stats = run_cli(
      "mcs-stats --corpus " + dir.file("corpus.json") + " --out " + dir.file("stats.csv"), dir);
  REQUIRE(stats.exit_code == 0);
  const std::string csv = read_file(dir.file("stats.csv"));
  CHECK(csv.rfind("question_id,trajectory_id,answer_correct,proportion\n", 0) == 0);

  const CliResult consensus = run_cli(
      "consensus --corpus " + dir.file("corpus.json") + " --out " + dir.file("masks.jsonl"), dir);
  REQUIRE(consensus.exit_code == 0);
  std::istringstream rows(read_file(dir.file("masks.jsonl")));
  std::string line;
  REQUIRE(std::getline(rows, line));
  CHECK(json::parse(line).at("mask").is_array());
}

TEST_CASE("an unreachable entailment service exits with code 3") {
  TempDir dir;
  write_file(dir.file("cfg.json"), synth_config(1, 3, 1, 1));
  REQUIRE(run_cli("synth --config " + dir.file("cfg.json") + " --out " + dir.file("corpus.json"),
                  dir)
              .exit_code == 0);
  write_file(dir.file("remote.json"),
             json{{"entailment",
                   {{"kind", "remote"}, {"url", "http://127.0.0.1:9"}, {"timeout_ms", 300}}}}
                 .dump());
  const CliResult r = run_cli("mcs --g1 " + dir.file("corpus.json") + " --g2 " +
                                  dir.file("corpus.json") + " --config " + dir.file("remote.json"),
                              dir);
  CHECK(r.exit_code == 3);
  const json diag = diagnostic_with(r.err, "code");
  CHECK(diag.at("code") == "entailment_transport");
  CHECK(diag.at("kind") == "provider");
}

TEST_CASE("the gradient check subcommand passes") {
  TempDir dir;
  const CliResult r = run_cli("gradcheck --graphs 6 --dim 6 --hidden 4", dir);
  REQUIRE(r.exit_code == 0);
  const json report = json::parse(r.out);
  CHECK(report.at("passed") == true);
  CHECK(report.at("compared").get<long long>() > 0);
  CHECK(report.at("max_rel_err").get<double>() < report.at("tolerance").get<double>());
}

TEST_CASE("feedback rounds with the scripted offline client") {
  TempDir dir;
  write_file(dir.file("cfg.json"), synth_config(2, 3, 1, 2));
  REQUIRE(run_cli("synth --config " + dir.file("cfg.json") + " --out " + dir.file("corpus.json") +
                      " --seed 9",
                  dir)
              .exit_code == 0);

  // Scores that flag exactly the planted-wrong steps of every trajectory.
  const json corpus = json::parse(read_file(dir.file("corpus.json")));
  std::string score_rows;
  for (const json& question : corpus.at("questions")) {
    for (const json& traj : question.at("trajectories")) {
      std::vector<double> scores;
      for (const json& label : traj.at("step_labels")) {
        scores.push_back(label.get<bool>() ? 1.0 : 0.0);
      }
      score_rows += json{{"question_id", question.at("question_id")},
                         {"trajectory_id", traj.at("trajectory_id")},
                         {"scores", scores}}
                        .dump() +
                    "\n";
    }
  }
  write_file(dir.file("scores.jsonl"), score_rows);

  const CliResult stepwise = run_cli(
      "feedback --mode stepwise --client mock --corpus " + dir.file("corpus.json") +
          " --scores " + dir.file("scores.jsonl") + " --out " + dir.file("outcomes.jsonl"),
      dir);
  REQUIRE(stepwise.exit_code == 0);
  const json note = json::parse(stepwise.out);
  CHECK(note.at("items") == 4);  // two wrong trajectories per question
  CHECK(note.at("success_rate") == 1.0);
  std::istringstream rows(read_file(dir.file("outcomes.jsonl")));
  std::string line;
  int outcome_count = 0;
  while (std::getline(rows, line)) {
    const json outcome = json::parse(line);
    CHECK(outcome.at("initially_wrong") == true);
    CHECK(outcome.at("corrected") == true);
    ++outcome_count;
  }
  CHECK(outcome_count == 4);

  // Answer-level feedback gives the offline client nothing to act on.
  const CliResult answer =
      run_cli("feedback --mode answer --client mock --corpus " + dir.file("corpus.json") +
                  " --out " + dir.file("answer.jsonl"),
              dir);
  REQUIRE(answer.exit_code == 0);
  CHECK(json::parse(answer.out).at("success_rate") == 0.0);

  const CliResult missing =
      run_cli("feedback --mode stepwise --client mock --corpus " + dir.file("corpus.json") +
                  " --out " + dir.file("x.jsonl"),
              dir);
  CHECK(missing.exit_code == 1);
  CHECK(diagnostic_with(missing.err, "code").at("code") == "missing_scores");
}
