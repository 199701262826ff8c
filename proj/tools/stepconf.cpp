#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "stepconf/config.hpp"
#include "stepconf/corpus.hpp"
#include "stepconf/error.hpp"
#include "stepconf/gibs.hpp"
#include "stepconf/io.hpp"
#include "stepconf/mcs.hpp"
#include "stepconf/metrics.hpp"
#include "stepconf/nibs.hpp"
#include "stepconf/parser.hpp"
#include "stepconf/rng.hpp"
#include "stepconf/selfcorrect.hpp"
#include "stepconf/similarity.hpp"
#include "stepconf/text.hpp"
#include "stepconf/trace.hpp"

namespace {

using namespace stepconf;

void diag(const nlohmann::json& j) { std::cerr << j.dump() << "\n"; }

int exit_code(const Error& e) {
  switch (e.kind()) {
    case ErrKind::Usage:
      return 1;
    case ErrKind::Provider:
      return 3;
    case ErrKind::Data:
    case ErrKind::Io:
      break;
  }
  return 2;
}

CliConfig load_config(const std::string& path, const std::optional<std::uint64_t>& seed) {
  CliConfig config = path.empty() ? CliConfig{} : CliConfig::load(path);
  if (seed) config.apply_seed(*seed);
  return config;
}

McsEngine engine_from(const std::string& flag, const CliConfig& config) {
  if (flag.empty()) return config.engine;
  return flag == "exact" ? McsEngine::Exact : McsEngine::Heuristic;
}

AnchorStrategy strategy_from(const std::string& flag, const CliConfig& config) {
  if (flag.empty()) return config.anchors;
  if (flag == "all") return AnchorStrategy::AllTrajectories;
  if (flag == "self-consistency") return AnchorStrategy::SelfConsistency;
  return AnchorStrategy::CorrectOnly;
}

std::string row_line(const char* field, const std::string& question_id,
                     const std::string& trajectory_id, const std::vector<double>& values) {
  nlohmann::json j{{"question_id", question_id}, {"trajectory_id", trajectory_id}};
  j[field] = values;
  return j.dump() + "\n";
}

struct ScoreRow {
  std::string question_id, trajectory_id;
  std::vector<double> values;
};

std::vector<ScoreRow> read_rows(const std::string& path, const char* field) {
  const std::string text = read_file(path);
  std::vector<ScoreRow> rows;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    const std::string_view line(text.data() + pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.empty()) continue;
    const nlohmann::json j = nlohmann::json::parse(line, nullptr, /*allow_exceptions=*/false);
    const bool shaped = j.is_object() && j.contains("question_id") &&
                        j["question_id"].is_string() && j.contains("trajectory_id") &&
                        j["trajectory_id"].is_string() && j.contains(field) &&
                        j[field].is_array();
    if (!shaped) {
      throw Error(ErrKind::Data, "bad_row",
                  fmt::format("line {} of {} is not a valid {} row", line_no, path, field));
    }
    ScoreRow row;
    row.question_id = j["question_id"].get<std::string>();
    row.trajectory_id = j["trajectory_id"].get<std::string>();
    for (const auto& v : j[field]) {
      if (!v.is_number()) {
        throw Error(ErrKind::Data, "bad_row",
                    fmt::format("line {} of {} holds a non-numeric {} value", line_no, path,
                                field));
      }
      row.values.push_back(v.get<double>());
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string bool_text(bool b) { return b ? "true" : "false"; }

// --- subcommand handlers ---------------------------------------------------

int run_parse(const std::string& in, const std::string& out, bool linear) {
  const std::string text = read_file(in);
  ReasoningGraph graph;
  std::vector<ParseWarning> warnings;
  if (linear) {
    std::vector<std::string> sentences;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      std::size_t end = text.find('\n', pos);
      if (end == std::string::npos) end = text.size();
      std::string sentence{trim(std::string_view(text.data() + pos, end - pos))};
      if (!sentence.empty()) sentences.push_back(std::move(sentence));
      if (end == text.size()) break;
      pos = end + 1;
    }
    graph = parse_linear(sentences);
  } else {
    ParsedGraph parsed = parse_structured(text);
    graph = std::move(parsed.graph);
    warnings = std::move(parsed.warnings);
  }
  for (const ParseWarning& w : warnings) {
    diag({{"kind", "warning"}, {"warning", w.kind}, {"detail", w.detail}});
  }
  graph.question_id = "q0";
  graph.trajectory_id = "t00";
  TrajectorySet set;
  set.question_id = "q0";
  set.question_text = "";
  Trajectory traj;
  traj.graph = std::move(graph);
  traj.answer_correct = false;
  set.trajectories.push_back(std::move(traj));
  save_corpus({set}, out);
  diag({{"kind", "note"}, {"steps", set.trajectories[0].graph.steps.size()},
        {"warnings", warnings.size()}});
  return 0;
}

int run_synth(const CliConfig& config, const std::string& out) {
  const std::vector<TrajectorySet> corpus = synth_corpus(config.synth);
  save_corpus(corpus, out);
  std::size_t trajectories = 0;
  for (const TrajectorySet& set : corpus) trajectories += set.trajectories.size();
  std::cout << nlohmann::json{{"questions", corpus.size()}, {"trajectories", trajectories}}.dump()
            << "\n";
  return 0;
}

int run_nibs(const CliConfig& config, const std::string& corpus_path, const std::string& out) {
  const std::vector<TrajectorySet> corpus = load_corpus(corpus_path);
  const NibsConfig nibs = make_nibs_config(config);
  std::string body;
  for (const TrajectorySet& set : corpus) {
    const auto [correct, wrong] = partition(set);
    (void)wrong;
    for (const Trajectory& traj : set.trajectories) {
      try {
        const ConfidenceVector cv = nibs_score(traj, correct, nibs);
        body += row_line("scores", set.question_id, traj.graph.trajectory_id, cv.scores);
      } catch (const Error& e) {
        nlohmann::json j = e.to_json();
        j["question_id"] = set.question_id;
        j["trajectory_id"] = traj.graph.trajectory_id;
        j["skipped"] = true;
        diag(j);
      }
    }
  }
  write_file_atomic(out, body);
  return 0;
}

int run_consensus(const CliConfig& config, const std::string& corpus_path,
                  const std::string& out, const std::string& engine_flag,
                  const std::string& strategy_flag) {
  const std::vector<TrajectorySet> corpus = load_corpus(corpus_path);
  const McsParams params = make_mcs_params(config);
  const McsEngine engine = engine_from(engine_flag, config);
  const AnchorStrategy strategy = strategy_from(strategy_flag, config);
  std::string body;
  for (const TrajectorySet& set : corpus) {
    const std::vector<const ReasoningGraph*> anchors = select_anchors(set, strategy);
    for (const Trajectory& traj : set.trajectories) {
      try {
        const ConsensusMask mask = consensus_mask(traj.graph, anchors, params, engine);
        body += row_line("mask", set.question_id, traj.graph.trajectory_id, mask.values);
      } catch (const Error& e) {
        nlohmann::json j = e.to_json();
        j["question_id"] = set.question_id;
        j["trajectory_id"] = traj.graph.trajectory_id;
        j["skipped"] = true;
        diag(j);
      }
    }
  }
  write_file_atomic(out, body);
  return 0;
}

int run_train(const CliConfig& config, const std::string& corpus_path,
              const std::string& masks_path, const std::string& out,
              const std::string& history_path) {
  const std::vector<TrajectorySet> corpus = load_corpus(corpus_path);
  const std::vector<ScoreRow> rows = read_rows(masks_path, "mask");
  std::map<std::pair<std::string, std::string>, const ScoreRow*> by_key;
  for (const ScoreRow& row : rows) by_key[{row.question_id, row.trajectory_id}] = &row;

  std::vector<TrainExample> examples;
  for (const TrajectorySet& set : corpus) {
    for (const Trajectory& traj : set.trajectories) {
      const auto it = by_key.find({set.question_id, traj.graph.trajectory_id});
      if (it == by_key.end()) {
        diag({{"kind", "note"}, {"question_id", set.question_id},
              {"trajectory_id", traj.graph.trajectory_id}, {"skipped", true},
              {"message", "no mask row"}});
        continue;
      }
      examples.push_back({traj.graph, it->second->values});
    }
  }

  const GibsConfig gibs = make_gibs_config(config);
  auto [model, history] = gibs_train(gibs, examples);
  save_model(model, out);
  if (!history_path.empty()) write_file_atomic(history_path, history_to_json(history));
  std::cout << nlohmann::json{{"epochs", history.train_loss.size()},
                              {"examples", examples.size()},
                              {"stopped_early", history.stopped_early}}
                   .dump()
            << "\n";
  return 0;
}

int run_score(const std::string& config_path, const std::optional<std::uint64_t>& seed,
              const std::string& model_path, const std::string& corpus_path,
              const std::string& out) {
  const GibsModel model = load_model(model_path);
  std::shared_ptr<const EmbeddingProvider> embedder;
  if (config_path.empty()) {
    embedder = std::make_shared<HashedBowEmbedding>(model.embed_dim);
  } else {
    embedder = make_embedder(load_config(config_path, seed));
  }
  const std::vector<TrajectorySet> corpus = load_corpus(corpus_path);
  std::string body;
  for (const TrajectorySet& set : corpus) {
    for (const Trajectory& traj : set.trajectories) {
      const std::vector<double> scores = gibs_score(model, traj.graph, *embedder);
      body += row_line("scores", set.question_id, traj.graph.trajectory_id, scores);
    }
  }
  write_file_atomic(out, body);
  return 0;
}

int run_eval(const std::string& scores_path, const std::string& corpus_path,
             const std::string& out, bool first_error, double acc_at_c, int ece_bins) {
  const std::vector<TrajectorySet> corpus = load_corpus(corpus_path);
  const std::vector<ScoreRow> rows = read_rows(scores_path, "scores");

  std::map<std::pair<std::string, std::string>, const Trajectory*> index;
  for (const TrajectorySet& set : corpus) {
    for (const Trajectory& traj : set.trajectories) {
      index[{set.question_id, traj.graph.trajectory_id}] = &traj;
    }
  }

  std::vector<ConfidenceVector> cvs;
  cvs.reserve(rows.size());
  std::vector<ScoredTrajectory> items;
  for (const ScoreRow& row : rows) {
    const auto it = index.find({row.question_id, row.trajectory_id});
    if (it == index.end()) {
      diag({{"kind", "note"}, {"question_id", row.question_id},
            {"trajectory_id", row.trajectory_id}, {"skipped", true},
            {"message", "scores for an unknown trajectory"}});
      continue;
    }
    if (!it->second->step_labels) {
      diag({{"kind", "note"}, {"question_id", row.question_id},
            {"trajectory_id", row.trajectory_id}, {"skipped", true},
            {"message", "trajectory has no step labels"}});
      continue;
    }
    cvs.push_back(ConfidenceVector{row.trajectory_id, row.values});
    items.push_back({it->second, &cvs.back()});
  }
  if (items.empty()) {
    throw Error(ErrKind::Data, "no_labeled_scores",
                "the scores file and the corpus share no labeled trajectories");
  }

  const LabeledScores data = first_error ? first_error_filter(items) : collect_labeled(items);
  const MetricReport rep = report(data, ReportConfig{acc_at_c, ece_bins});
  const std::string text = report_to_json(rep).dump() + "\n";
  write_file_atomic(out, text);
  std::cout << text;
  return 0;
}

ReasoningGraph first_graph(const std::string& path) {
  const std::vector<TrajectorySet> corpus = load_corpus(path);
  if (corpus.empty() || corpus[0].trajectories.empty()) {
    throw Error(ErrKind::Data, "empty_corpus", fmt::format("{} holds no trajectories", path));
  }
  return corpus[0].trajectories[0].graph;
}

int run_mcs(const CliConfig& config, const std::string& g1_path, const std::string& g2_path,
            const std::string& engine_flag) {
  const ReasoningGraph g1 = first_graph(g1_path);
  const ReasoningGraph g2 = first_graph(g2_path);
  const McsParams params = make_mcs_params(config);
  const McsEngine engine = engine_from(engine_flag, config);
  const McsResult result = engine == McsEngine::Exact ? mcs_exact(g1, g2, params)
                                                      : mcs_heuristic(g1, g2, params);
  nlohmann::json pairs = nlohmann::json::array();
  for (const MatchedPair& pair : result.matched_edge_pairs) {
    nlohmann::json p{{"edge1", pair.edge1}, {"edge2", pair.edge2},
                     {"edge_score", pair.edge_score}};
    if (pair.node_score) p["node_score"] = *pair.node_score;
    pairs.push_back(std::move(p));
  }
  nlohmann::json mapping = nlohmann::json::object();
  for (const auto& [a, b] : result.node_mapping) mapping[fmt::format("{}", a)] = b;
  std::cout << nlohmann::json{{"size", result.size},
                              {"sim_call_count", result.sim_call_count},
                              {"node_call_count", result.node_call_count},
                              {"matched_edge_pairs", pairs},
                              {"node_mapping", mapping}}
                   .dump()
            << "\n";
  return 0;
}

int run_mcs_stats(const CliConfig& config, const std::string& corpus_path,
                  const std::string& out, const std::string& engine_flag) {
  const std::vector<TrajectorySet> corpus = load_corpus(corpus_path);
  const McsParams params = make_mcs_params(config);
  const McsEngine engine = engine_from(engine_flag, config);
  std::string body = "question_id,trajectory_id,answer_correct,proportion\n";
  for (const TrajectorySet& set : corpus) {
    try {
      for (const McsProportion& row : mcs_proportion(set, params, engine)) {
        body += fmt::format("{},{},{},{}\n", set.question_id, row.trajectory_id,
                            bool_text(row.answer_correct), format_double(row.proportion));
      }
    } catch (const Error& e) {
      nlohmann::json j = e.to_json();
      j["question_id"] = set.question_id;
      j["skipped"] = true;
      diag(j);
    }
  }
  write_file_atomic(out, body);
  return 0;
}

std::string mock_graph_reply(const std::string& answer) {
  std::string quoted;
  for (char c : answer) {
    if (c == '\\' || c == '\'') quoted += '\\';
    quoted += c;
  }
  return fmt::format(
      "ReasoningGraph(nodes=[ReasoningNode(id=0, description='regenerated solution', "
      "output='done', depends_on=[])], final_answer='{}')",
      quoted);
}

int run_feedback(const CliConfig& config, const std::string& corpus_path,
                 const std::string& scores_path, const std::string& mode,
                 const std::string& client_kind, const std::string& out) {
  const std::vector<TrajectorySet> corpus = load_corpus(corpus_path);
  std::map<std::pair<std::string, std::string>, const ScoreRow*> by_key;
  std::vector<ScoreRow> rows;
  if (!scores_path.empty()) {
    rows = read_rows(scores_path, "scores");
    for (const ScoreRow& row : rows) by_key[{row.question_id, row.trajectory_id}] = &row;
  } else if (mode == "stepwise") {
    throw Error(ErrKind::Usage, "missing_scores", "stepwise feedback needs --scores");
  }

  std::vector<FeedbackItem> items;
  std::vector<std::string> golds;
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<const Trajectory*> trajectories;
  for (const TrajectorySet& set : corpus) {
    if (!set.gold_answer) {
      diag({{"kind", "note"}, {"question_id", set.question_id}, {"skipped", true},
            {"message", "question has no gold answer"}});
      continue;
    }
    for (const Trajectory& traj : set.trajectories) {
      if (traj.answer_correct) continue;
      try {
        FeedbackItem item;
        if (mode == "stepwise") {
          const auto it = by_key.find({set.question_id, traj.graph.trajectory_id});
          if (it == by_key.end()) {
            diag({{"kind", "note"}, {"question_id", set.question_id},
                  {"trajectory_id", traj.graph.trajectory_id}, {"skipped", true},
                  {"message", "no scores row"}});
            continue;
          }
          item = build_stepwise_feedback(set.question_text, traj.graph, it->second->values,
                                         config.feedback);
        } else {
          item = make_answer_item(set.question_text, traj.graph.final_answer);
        }
        items.push_back(std::move(item));
        golds.push_back(*set.gold_answer);
        meta.emplace_back(set.question_id, traj.graph.trajectory_id);
        trajectories.push_back(&traj);
      } catch (const Error& e) {
        nlohmann::json j = e.to_json();
        j["question_id"] = set.question_id;
        j["trajectory_id"] = traj.graph.trajectory_id;
        j["skipped"] = true;
        diag(j);
      }
    }
  }
  if (items.empty()) {
    throw Error(ErrKind::Data, "no_feedback_items",
                "the corpus holds no initially wrong trajectories with gold answers");
  }

  std::unique_ptr<LlmClient> client;
  if (client_kind == "mock") {
    // Label oracle: the reply carries the gold answer exactly when a truly
    // wrong step (label false) was flagged in the prompt.
    auto mock = std::make_unique<MockLlmClient>();
    for (std::size_t i = 0; i < items.size(); ++i) {
      bool fixable = false;
      if (trajectories[i]->step_labels) {
        const auto& labels = *trajectories[i]->step_labels;
        for (int j : items[i].flagged_steps) {
          if (j >= 0 && static_cast<std::size_t>(j) < labels.size() &&
              !labels[static_cast<std::size_t>(j)]) {
            fixable = true;
            break;
          }
        }
      }
      mock->script(items[i].built_prompt,
                   mock_graph_reply(fixable ? golds[i] : items[i].previous_answer));
    }
    client = std::move(mock);
  } else {
    client = std::make_unique<HttpChatClient>(config.chat);
  }

  const std::vector<CorrectionOutcome> outcomes = run_round(*client, items, golds);
  std::string body;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    nlohmann::json j{{"question_id", meta[i].first},
                     {"trajectory_id", meta[i].second},
                     {"initially_wrong", outcomes[i].initially_wrong},
                     {"corrected", outcomes[i].corrected},
                     {"new_answer", outcomes[i].new_answer}};
    if (outcomes[i].diagnostic) j["diagnostic"] = *outcomes[i].diagnostic;
    body += j.dump() + "\n";
  }
  write_file_atomic(out, body);
  std::cout << nlohmann::json{{"items", outcomes.size()},
                              {"success_rate", success_rate(outcomes)}}
                   .dump()
            << "\n";
  return 0;
}

int run_gradcheck(const CliConfig& config, bool have_config, int dim, int hidden, int graphs,
                  double step, double tolerance) {
  GibsConfig gibs;
  if (have_config) {
    gibs = config.gibs;  // loss variant, lambda, epsilon, seed
  }
  gibs.embed_dim = dim;
  gibs.hidden_dim = hidden;
  gibs.rng_seed = config.rng_seed;
  gibs.embedder = std::make_shared<HashedBowEmbedding>(dim);

  SynthConfig synth;
  synth.num_questions = (graphs + 1) / 2;
  synth.anchors_per_question = 3;
  synth.correct_per_question = 1;
  synth.wrong_per_question = 1;
  synth.distractor_rate = 0.4;
  synth.rng_seed = config.rng_seed;
  const std::vector<TrajectorySet> corpus = synth_corpus(synth);

  Rng root(config.rng_seed);
  Rng mask_rng = root.fork(9);
  std::vector<TrainExample> examples;
  for (const TrajectorySet& set : corpus) {
    for (const Trajectory& traj : set.trajectories) {
      if (static_cast<int>(examples.size()) >= graphs) break;
      TrainExample example;
      example.graph = traj.graph;
      example.mask.resize(traj.graph.steps.size());
      for (double& v : example.mask) v = mask_rng.uniform();
      examples.push_back(std::move(example));
    }
  }

  const GradCheckReport report = grad_check(gibs, examples, step, tolerance);
  std::cout << nlohmann::json{{"compared", report.compared},
                              {"max_rel_err", report.max_rel_err},
                              {"passed", report.passed},
                              {"tolerance", tolerance}}
                   .dump()
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stepwise confidence toolkit for reasoning traces"};
  app.require_subcommand(1);
  app.fallthrough();

  std::optional<std::uint64_t> seed;
  app.add_option("--seed", seed, "override the configured rng seed everywhere");

  int rc = 0;

  // parse
  struct {
    std::string in, out;
    bool linear = false;
  } parse_opt;
  auto* parse_cmd = app.add_subcommand("parse", "extract a reasoning graph from model output");
  parse_cmd->add_option("--in", parse_opt.in, "raw model output")->required();
  parse_cmd->add_option("--out", parse_opt.out, "corpus file to write")->required();
  parse_cmd->add_flag("--linear", parse_opt.linear, "treat each input line as a chain step");
  parse_cmd->callback([&] { rc = run_parse(parse_opt.in, parse_opt.out, parse_opt.linear); });

  // synth
  struct {
    std::string config, out;
  } synth_opt;
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic labeled corpus");
  synth_cmd->add_option("--config", synth_opt.config, "configuration file");
  synth_cmd->add_option("--out", synth_opt.out, "corpus file to write")->required();
  synth_cmd->callback(
      [&] { rc = run_synth(load_config(synth_opt.config, seed), synth_opt.out); });

  // nibs
  struct {
    std::string config, corpus, out;
  } nibs_opt;
  auto* nibs_cmd = app.add_subcommand("nibs", "similarity-based step confidences");
  nibs_cmd->add_option("--corpus", nibs_opt.corpus, "corpus file")->required();
  nibs_cmd->add_option("--config", nibs_opt.config, "configuration file");
  nibs_cmd->add_option("--out", nibs_opt.out, "scores file to write (jsonl)")->required();
  nibs_cmd->callback([&] {
    rc = run_nibs(load_config(nibs_opt.config, seed), nibs_opt.corpus, nibs_opt.out);
  });

  // consensus
  struct {
    std::string config, corpus, out, engine, strategy;
  } cons_opt;
  auto* cons_cmd = app.add_subcommand("consensus", "per-step consensus masks via subgraph matching");
  cons_cmd->add_option("--corpus", cons_opt.corpus, "corpus file")->required();
  cons_cmd->add_option("--config", cons_opt.config, "configuration file");
  cons_cmd->add_option("--out", cons_opt.out, "masks file to write (jsonl)")->required();
  cons_cmd->add_option("--engine", cons_opt.engine, "matching engine")
      ->check(CLI::IsMember({"heuristic", "exact"}));
  cons_cmd->add_option("--strategy", cons_opt.strategy, "anchor selection")
      ->check(CLI::IsMember({"correct-only", "all", "self-consistency"}));
  cons_cmd->callback([&] {
    rc = run_consensus(load_config(cons_opt.config, seed), cons_opt.corpus, cons_opt.out,
                       cons_opt.engine, cons_opt.strategy);
  });

  // train
  struct {
    std::string config, corpus, masks, out, history;
  } train_opt;
  auto* train_cmd = app.add_subcommand("train", "fit the graph mask predictor");
  train_cmd->add_option("--corpus", train_opt.corpus, "corpus file")->required();
  train_cmd->add_option("--masks", train_opt.masks, "consensus masks (jsonl)")->required();
  train_cmd->add_option("--config", train_opt.config, "configuration file");
  train_cmd->add_option("--out", train_opt.out, "model file to write")->required();
  train_cmd->add_option("--history", train_opt.history, "training history json to write");
  train_cmd->callback([&] {
    rc = run_train(load_config(train_opt.config, seed), train_opt.corpus, train_opt.masks,
                   train_opt.out, train_opt.history);
  });

  // score
  struct {
    std::string config, model, corpus, out;
  } score_opt;
  auto* score_cmd = app.add_subcommand("score", "per-step confidences from a trained model");
  score_cmd->add_option("--model", score_opt.model, "model file")->required();
  score_cmd->add_option("--corpus", score_opt.corpus, "corpus file")->required();
  score_cmd->add_option("--config", score_opt.config, "configuration file");
  score_cmd->add_option("--out", score_opt.out, "scores file to write (jsonl)")->required();
  score_cmd->callback([&] {
    rc = run_score(score_opt.config, seed, score_opt.model, score_opt.corpus, score_opt.out);
  });

  // eval
  struct {
    std::string scores, corpus, out;
    bool first_error = false;
    double acc_at = 80.0;
    int ece_bins = 10;
  } eval_opt;
  auto* eval_cmd = app.add_subcommand("eval", "step-level metrics against planted labels");
  eval_cmd->add_option("--scores", eval_opt.scores, "scores file (jsonl)")->required();
  eval_cmd->add_option("--corpus", eval_opt.corpus, "corpus file with step labels")->required();
  eval_cmd->add_option("--out", eval_opt.out, "report file to write")->required();
  eval_cmd->add_flag("--first-error", eval_opt.first_error,
                     "keep each trajectory only up to its first wrong step");
  eval_cmd->add_option("--acc-at", eval_opt.acc_at, "selective accuracy percentile");
  eval_cmd->add_option("--ece-bins", eval_opt.ece_bins, "calibration bins");
  eval_cmd->callback([&] {
    rc = run_eval(eval_opt.scores, eval_opt.corpus, eval_opt.out, eval_opt.first_error,
                  eval_opt.acc_at, eval_opt.ece_bins);
  });

  // mcs
  struct {
    std::string config, g1, g2, engine;
  } mcs_opt;
  auto* mcs_cmd = app.add_subcommand("mcs", "match two reasoning graphs");
  mcs_cmd->add_option("--g1", mcs_opt.g1, "corpus file; its first graph is used")->required();
  mcs_cmd->add_option("--g2", mcs_opt.g2, "corpus file; its first graph is used")->required();
  mcs_cmd->add_option("--config", mcs_opt.config, "configuration file");
  mcs_cmd->add_option("--engine", mcs_opt.engine, "matching engine")
      ->check(CLI::IsMember({"heuristic", "exact"}));
  mcs_cmd->callback([&] {
    rc = run_mcs(load_config(mcs_opt.config, seed), mcs_opt.g1, mcs_opt.g2, mcs_opt.engine);
  });

  // mcs-stats
  struct {
    std::string config, corpus, out, engine;
  } stats_opt;
  auto* stats_cmd = app.add_subcommand("mcs-stats", "per-trajectory matched-edge proportions");
  stats_cmd->add_option("--corpus", stats_opt.corpus, "corpus file")->required();
  stats_cmd->add_option("--config", stats_opt.config, "configuration file");
  stats_cmd->add_option("--out", stats_opt.out, "csv file to write")->required();
  stats_cmd->add_option("--engine", stats_opt.engine, "matching engine")
      ->check(CLI::IsMember({"heuristic", "exact"}));
  stats_cmd->callback([&] {
    rc = run_mcs_stats(load_config(stats_opt.config, seed), stats_opt.corpus, stats_opt.out,
                       stats_opt.engine);
  });

  // feedback
  struct {
    std::string config, corpus, scores, mode, client = "mock", out;
  } fb_opt;
  auto* fb_cmd = app.add_subcommand("feedback", "one regeneration round on wrong trajectories");
  fb_cmd->add_option("--corpus", fb_opt.corpus, "corpus file with gold answers")->required();
  fb_cmd->add_option("--scores", fb_opt.scores, "scores file (jsonl), needed for stepwise mode");
  fb_cmd->add_option("--mode", fb_opt.mode, "feedback style")
      ->required()
      ->check(CLI::IsMember({"answer", "stepwise"}));
  fb_cmd->add_option("--client", fb_opt.client, "llm client")
      ->check(CLI::IsMember({"mock", "http"}));
  fb_cmd->add_option("--out", fb_opt.out, "outcomes file to write (jsonl)")->required();
  fb_cmd->callback([&] {
    rc = run_feedback(load_config(fb_opt.config, seed), fb_opt.corpus, fb_opt.scores,
                      fb_opt.mode, fb_opt.client, fb_opt.out);
  });
  fb_cmd->add_option("--config", fb_opt.config, "configuration file");

  // gradcheck
  struct {
    std::string config;
    int dim = 8, hidden = 16, graphs = 20;
    double step = 1e-5, tolerance = 1e-4;
  } gc_opt;
  auto* gc_cmd = app.add_subcommand("gradcheck", "verify analytic gradients by finite differences");
  gc_cmd->add_option("--config", gc_opt.config, "configuration file (loss variant and seed)");
  gc_cmd->add_option("--dim", gc_opt.dim, "embedding dimension");
  gc_cmd->add_option("--hidden", gc_opt.hidden, "hidden dimension");
  gc_cmd->add_option("--graphs", gc_opt.graphs, "number of random graphs");
  gc_cmd->add_option("--step", gc_opt.step, "finite difference step");
  gc_cmd->add_option("--tolerance", gc_opt.tolerance, "max relative error allowed");
  gc_cmd->callback([&] {
    rc = run_gradcheck(load_config(gc_opt.config, seed), !gc_opt.config.empty(), gc_opt.dim,
                       gc_opt.hidden, gc_opt.graphs, gc_opt.step, gc_opt.tolerance);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    diag({{"kind", "usage"}, {"code", "bad_arguments"}, {"message", e.what()}});
    return 1;
  } catch (const Error& e) {
    diag(e.to_json());
    return exit_code(e);
  } catch (const std::exception& e) {
    diag({{"kind", "data"}, {"code", "internal_error"}, {"message", e.what()}});
    return 2;
  }
  return rc;
}
