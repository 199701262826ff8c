#include <algorithm>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "stepconf/corpus.hpp"
#include "stepconf/error.hpp"
#include "stepconf/rng.hpp"

namespace stepconf {

namespace {

constexpr int kDistractorPool = 3;

struct QuestionPlan {
  std::string qid;
  std::string gold;
  std::string alt;  // the single wrong final answer all bad trajectories share
  std::vector<std::vector<int>> parents;  // planted DAG over anchors
  std::vector<std::string> anchor_edge, anchor_node;
  std::vector<std::string> distractor_edge, distractor_node;
};

QuestionPlan plan_question(const SynthConfig& cfg, int q, Rng& rng) {
  QuestionPlan plan;
  plan.qid = fmt::format("s{}-q{:03}", cfg.rng_seed, q);
  plan.gold = "ans-" + plan.qid;
  plan.alt = "alt-" + plan.qid;
  const int a_count = cfg.anchors_per_question;
  plan.parents.resize(a_count);
  for (int a = 1; a < a_count; ++a) {
    if (rng.bernoulli(0.15)) continue;  // occasionally premise-free
    int count = (a >= 2 && rng.bernoulli(0.35)) ? 2 : 1;
    std::vector<int> earlier(a);
    for (int i = 0; i < a; ++i) earlier[i] = i;
    rng.shuffle(earlier);
    earlier.resize(std::min<std::size_t>(count, earlier.size()));
    std::sort(earlier.begin(), earlier.end());
    plan.parents[a] = std::move(earlier);
  }
  for (int a = 0; a < a_count; ++a) {
    plan.anchor_edge.push_back(fmt::format("derive part {} for {}", a, plan.qid));
    plan.anchor_node.push_back(fmt::format("value-{}-{}", plan.qid, a));
  }
  for (int r = 0; r < kDistractorPool; ++r) {
    plan.distractor_edge.push_back(fmt::format("restate context {} of {}", r, plan.qid));
    plan.distractor_node.push_back(fmt::format("note-{}-{}", plan.qid, r));
  }
  return plan;
}

// Random topological order of the planted DAG (Kahn with random ready picks).
std::vector<int> random_topo_order(const std::vector<std::vector<int>>& parents, Rng& rng) {
  const int n = static_cast<int>(parents.size());
  std::vector<int> remaining(n);
  for (int a = 0; a < n; ++a) remaining[a] = static_cast<int>(parents[a].size());
  std::vector<bool> placed(n, false);
  std::vector<int> order;
  while (static_cast<int>(order.size()) < n) {
    std::vector<int> ready;
    for (int a = 0; a < n; ++a) {
      if (!placed[a] && remaining[a] == 0) ready.push_back(a);
    }
    int pick = ready[rng.below(ready.size())];
    placed[pick] = true;
    order.push_back(pick);
    for (int a = 0; a < n; ++a) {
      if (!placed[a]) {
        for (int p : parents[a]) {
          if (p == pick) --remaining[a];
        }
      }
    }
  }
  return order;
}

Trajectory build_trajectory(const SynthConfig& cfg, const QuestionPlan& plan, int t_index,
                            bool correct, Rng& rng) {
  const int a_count = cfg.anchors_per_question;
  std::vector<int> order = random_topo_order(plan.parents, rng);
  const int corrupted_anchor = correct ? -1 : static_cast<int>(rng.below(a_count));

  // Items: anchor id, or kDistractorPool-indexed filler (encoded as -1-r), or
  // the extra corrupt step (encoded as -100).
  struct Item {
    enum Kind { Anchor, Distractor, Extra } kind;
    int id;
  };
  std::vector<Item> items;
  for (int pos = 0; pos < a_count; ++pos) {
    items.push_back({Item::Anchor, order[pos]});
    if (!correct && cfg.corruption_mode == SynthConfig::Corruption::ExtraStep &&
        order[pos] == corrupted_anchor) {
      items.push_back({Item::Extra, corrupted_anchor});
    }
    if (rng.bernoulli(cfg.distractor_rate)) {
      items.push_back({Item::Distractor, static_cast<int>(rng.below(kDistractorPool))});
    }
  }

  Trajectory traj;
  traj.answer_correct = correct;
  traj.graph.question_id = plan.qid;
  traj.graph.trajectory_id = fmt::format("t{:02}", t_index);
  traj.graph.final_answer = correct ? plan.gold : plan.alt;

  std::vector<int> anchor_pos(a_count, -1);
  std::vector<bool> labels;
  for (const Item& item : items) {
    Step step;
    step.index = static_cast<int>(traj.graph.steps.size());
    bool label = true;
    switch (item.kind) {
      case Item::Anchor: {
        anchor_pos[item.id] = step.index;
        step.edge_text = plan.anchor_edge[item.id];
        step.node_text = plan.anchor_node[item.id];
        for (int p : plan.parents[item.id]) step.depends_on.push_back(anchor_pos[p]);
        std::sort(step.depends_on.begin(), step.depends_on.end());
        if (!correct && item.id == corrupted_anchor) {
          if (cfg.corruption_mode == SynthConfig::Corruption::ReplaceAnchor) {
            step.edge_text =
                fmt::format("misapply rule {} on {} case {}", item.id, plan.qid, t_index);
            step.node_text = fmt::format("bogus-{}-{}-{}", plan.qid, item.id, t_index);
            label = false;
          } else if (cfg.corruption_mode == SynthConfig::Corruption::WrongResult) {
            step.node_text = fmt::format("wrongval-{}-{}-{}", plan.qid, item.id, t_index);
            label = false;
          }
        }
        break;
      }
      case Item::Distractor: {
        step.edge_text = plan.distractor_edge[item.id];
        step.node_text = plan.distractor_node[item.id];
        if (step.index > 0) step.depends_on.push_back(step.index - 1);
        break;
      }
      case Item::Extra: {
        step.edge_text =
            fmt::format("insert spurious claim {} in {} case {}", item.id, plan.qid, t_index);
        step.node_text = fmt::format("junk-{}-{}-{}", plan.qid, item.id, t_index);
        step.depends_on.push_back(anchor_pos[item.id]);
        label = false;
        break;
      }
    }
    labels.push_back(label);
    traj.graph.steps.push_back(std::move(step));
  }
  traj.step_labels = std::move(labels);
  return traj;
}

}  // namespace

std::vector<TrajectorySet> synth_corpus(const SynthConfig& cfg) {
  cfg.validate_or_throw();
  Rng rng(cfg.rng_seed);
  std::vector<TrajectorySet> corpus;
  for (int q = 0; q < cfg.num_questions; ++q) {
    QuestionPlan plan = plan_question(cfg, q, rng);
    TrajectorySet set;
    set.question_id = plan.qid;
    set.question_text = fmt::format("synthetic question {} with {} anchor steps", plan.qid,
                                    cfg.anchors_per_question);
    set.gold_answer = plan.gold;
    int t_index = 0;
    for (int t = 0; t < cfg.correct_per_question; ++t) {
      set.trajectories.push_back(build_trajectory(cfg, plan, t_index++, true, rng));
    }
    for (int t = 0; t < cfg.wrong_per_question; ++t) {
      set.trajectories.push_back(build_trajectory(cfg, plan, t_index++, false, rng));
    }
    corpus.push_back(std::move(set));
  }
  return corpus;
}

}  // namespace stepconf
