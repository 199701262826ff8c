#include "stepconf/corpus.hpp"

#include <set>

#include <fmt/format.h>

#include "stepconf/error.hpp"
#include "stepconf/io.hpp"

namespace stepconf {

namespace {

[[noreturn]] void schema_fail(const std::string& pointer, std::string message) {
  throw Error(ErrKind::Data, "schema", std::move(message), {{"json_pointer", pointer}});
}

const nlohmann::json& require(const nlohmann::json& obj, const char* key,
                              const std::string& pointer) {
  if (!obj.is_object()) {
    schema_fail(pointer, "expected an object");
  }
  auto it = obj.find(key);
  if (it == obj.end()) {
    schema_fail(pointer + "/" + key, fmt::format("missing required key \"{}\"", key));
  }
  return *it;
}

std::string require_string(const nlohmann::json& obj, const char* key,
                           const std::string& pointer) {
  const auto& v = require(obj, key, pointer);
  if (!v.is_string()) {
    schema_fail(pointer + "/" + key, fmt::format("\"{}\" must be a string", key));
  }
  return v.get<std::string>();
}

}  // namespace

nlohmann::json corpus_to_json(const std::vector<TrajectorySet>& corpus) {
  nlohmann::json questions = nlohmann::json::array();
  for (const TrajectorySet& set : corpus) {
    nlohmann::json trajectories = nlohmann::json::array();
    for (const Trajectory& traj : set.trajectories) {
      nlohmann::json steps = nlohmann::json::array();
      for (const Step& step : traj.graph.steps) {
        steps.push_back({{"edge_text", step.edge_text},
                         {"node_text", step.node_text},
                         {"depends_on", step.depends_on}});
      }
      nlohmann::json jt{{"trajectory_id", traj.graph.trajectory_id},
                        {"answer_correct", traj.answer_correct},
                        {"final_answer", traj.graph.final_answer},
                        {"steps", std::move(steps)}};
      if (traj.step_labels) {
        jt["step_labels"] = *traj.step_labels;
      } else {
        jt["step_labels"] = nullptr;
      }
      trajectories.push_back(std::move(jt));
    }
    nlohmann::json jq{{"question_id", set.question_id},
                      {"question_text", set.question_text},
                      {"trajectories", std::move(trajectories)}};
    if (set.gold_answer) {
      jq["gold_answer"] = *set.gold_answer;
    } else {
      jq["gold_answer"] = nullptr;
    }
    questions.push_back(std::move(jq));
  }
  return nlohmann::json{{"version", 1}, {"questions", std::move(questions)}};
}

std::vector<TrajectorySet> corpus_from_json(const nlohmann::json& root) {
  if (!root.is_object()) {
    schema_fail("", "corpus root must be an object");
  }
  const auto& version = require(root, "version", "");
  if (!version.is_number_integer() || version.get<int>() != 1) {
    schema_fail("/version", "unsupported corpus version (expected 1)");
  }
  const auto& questions = require(root, "questions", "");
  if (!questions.is_array()) {
    schema_fail("/questions", "\"questions\" must be an array");
  }

  std::vector<TrajectorySet> corpus;
  for (std::size_t qi = 0; qi < questions.size(); ++qi) {
    const std::string qp = fmt::format("/questions/{}", qi);
    const nlohmann::json& jq = questions[qi];
    TrajectorySet set;
    set.question_id = require_string(jq, "question_id", qp);
    set.question_text = require_string(jq, "question_text", qp);
    const auto& gold = require(jq, "gold_answer", qp);
    if (gold.is_string()) {
      set.gold_answer = gold.get<std::string>();
    } else if (!gold.is_null()) {
      schema_fail(qp + "/gold_answer", "\"gold_answer\" must be a string or null");
    }
    const auto& trajectories = require(jq, "trajectories", qp);
    if (!trajectories.is_array() || trajectories.empty()) {
      schema_fail(qp + "/trajectories", "\"trajectories\" must be a non-empty array");
    }

    std::set<std::string> seen_ids;
    for (std::size_t ti = 0; ti < trajectories.size(); ++ti) {
      const std::string tp = fmt::format("{}/trajectories/{}", qp, ti);
      const nlohmann::json& jt = trajectories[ti];
      Trajectory traj;
      traj.graph.question_id = set.question_id;
      traj.graph.trajectory_id = require_string(jt, "trajectory_id", tp);
      if (!seen_ids.insert(traj.graph.trajectory_id).second) {
        schema_fail(tp + "/trajectory_id",
                    fmt::format("duplicate trajectory_id \"{}\" within question \"{}\"",
                                traj.graph.trajectory_id, set.question_id));
      }
      const auto& correct = require(jt, "answer_correct", tp);
      if (!correct.is_boolean()) {
        schema_fail(tp + "/answer_correct", "\"answer_correct\" must be a boolean");
      }
      traj.answer_correct = correct.get<bool>();
      traj.graph.final_answer = require_string(jt, "final_answer", tp);

      const auto& steps = require(jt, "steps", tp);
      if (!steps.is_array()) {
        schema_fail(tp + "/steps", "\"steps\" must be an array");
      }
      for (std::size_t si = 0; si < steps.size(); ++si) {
        const std::string sp = fmt::format("{}/steps/{}", tp, si);
        const nlohmann::json& js = steps[si];
        Step step;
        step.index = static_cast<int>(si);
        step.edge_text = require_string(js, "edge_text", sp);
        step.node_text = require_string(js, "node_text", sp);
        const auto& deps = require(js, "depends_on", sp);
        if (!deps.is_array()) {
          schema_fail(sp + "/depends_on", "\"depends_on\" must be an array of integers");
        }
        for (std::size_t di = 0; di < deps.size(); ++di) {
          if (!deps[di].is_number_integer()) {
            schema_fail(fmt::format("{}/depends_on/{}", sp, di),
                        "\"depends_on\" entries must be integers");
          }
          int dep = deps[di].get<int>();
          if (dep < 0 || dep >= step.index) {
            schema_fail(fmt::format("{}/depends_on/{}", sp, di),
                        fmt::format("dependency {} is outside [0, {})", dep, step.index));
          }
          step.depends_on.push_back(dep);
        }
        traj.graph.steps.push_back(std::move(step));
      }

      const auto& labels = require(jt, "step_labels", tp);
      if (labels.is_array()) {
        std::vector<bool> out;
        for (std::size_t li = 0; li < labels.size(); ++li) {
          if (!labels[li].is_boolean()) {
            schema_fail(fmt::format("{}/step_labels/{}", tp, li),
                        "\"step_labels\" entries must be booleans");
          }
          out.push_back(labels[li].get<bool>());
        }
        if (out.size() != traj.graph.steps.size()) {
          schema_fail(tp + "/step_labels",
                      fmt::format("step_labels has {} entries for {} steps", out.size(),
                                  traj.graph.steps.size()));
        }
        traj.step_labels = std::move(out);
      } else if (!labels.is_null()) {
        schema_fail(tp + "/step_labels", "\"step_labels\" must be an array of booleans or null");
      }

      auto violations = validate(traj.graph);
      if (!violations.empty()) {
        schema_fail(tp, fmt::format("graph violates step invariants: {}",
                                    fmt::join(violations, "; ")));
      }
      set.trajectories.push_back(std::move(traj));
    }
    corpus.push_back(std::move(set));
  }
  return corpus;
}

std::string corpus_to_bytes(const std::vector<TrajectorySet>& corpus) {
  return corpus_to_json(corpus).dump() + "\n";
}

std::vector<TrajectorySet> load_corpus(const std::filesystem::path& path) {
  nlohmann::json j = nlohmann::json::parse(read_file(path), nullptr, false);
  if (j.is_discarded()) {
    throw Error(ErrKind::Data, "json_parse", "corpus file is not valid JSON: " + path.string(),
                {{"path", path.string()}});
  }
  return corpus_from_json(j);
}

void save_corpus(const std::vector<TrajectorySet>& corpus, const std::filesystem::path& path) {
  write_file_atomic(path, corpus_to_bytes(corpus));
}

void SynthConfig::validate_or_throw() const {
  auto check = [](int v, const char* name) {
    if (v < 1) {
      throw Error(ErrKind::Usage, "bad_synth_config", fmt::format("{} must be >= 1, got {}", name, v));
    }
  };
  check(num_questions, "num_questions");
  check(anchors_per_question, "anchors_per_question");
  check(correct_per_question, "correct_per_question");
  check(wrong_per_question, "wrong_per_question");
  if (distractor_rate < 0.0 || distractor_rate > 1.0) {
    throw Error(ErrKind::Usage, "bad_synth_config",
                fmt::format("distractor_rate must be in [0,1], got {}", distractor_rate));
  }
}

}  // namespace stepconf
