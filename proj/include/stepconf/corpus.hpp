#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "stepconf/trace.hpp"

namespace stepconf {

// Interchange schema, version 1:
// {"version":1,"questions":[{"question_id","question_text","gold_answer":str|null,
//   "trajectories":[{"trajectory_id","answer_correct","step_labels":[bool]|null,
//     "final_answer","steps":[{"edge_text","node_text","depends_on":[int]}]}]}]}
// Serialization is canonical (sorted keys, compact separators, trailing
// newline), so save ∘ load ∘ save is byte-identical.

nlohmann::json corpus_to_json(const std::vector<TrajectorySet>& corpus);
std::vector<TrajectorySet> corpus_from_json(const nlohmann::json& j);

std::vector<TrajectorySet> load_corpus(const std::filesystem::path& path);
void save_corpus(const std::vector<TrajectorySet>& corpus, const std::filesystem::path& path);

std::string corpus_to_bytes(const std::vector<TrajectorySet>& corpus);

struct SynthConfig {
  int num_questions = 1;
  int anchors_per_question = 3;
  int correct_per_question = 1;
  int wrong_per_question = 1;
  double distractor_rate = 0.0;
  enum class Corruption { ReplaceAnchor, ExtraStep, WrongResult };
  Corruption corruption_mode = Corruption::ReplaceAnchor;
  std::uint64_t rng_seed = 0;

  void validate_or_throw() const;
};

// Deterministic synthetic corpus. Each question plants `anchors_per_question`
// fixed-text anchor steps wired into a random dependency DAG. Correct
// trajectories emit every anchor in a random topological order plus
// Bernoulli(distractor_rate) paraphrase distractors drawn from a small
// per-question pool; wrong trajectories additionally corrupt exactly one
// anchor according to corruption_mode and share a per-question wrong final
// answer. step_labels are true everywhere except corrupted/extra steps.
std::vector<TrajectorySet> synth_corpus(const SynthConfig& config);

}  // namespace stepconf
