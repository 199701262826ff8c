#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "stepconf/rng.hpp"
#include "stepconf/similarity.hpp"
#include "stepconf/trace.hpp"

namespace stepconf {

enum class GibsLoss { EntropyCe, KlCe };

struct GibsConfig {
  int embed_dim = 16;
  int hidden_dim = 128;
  double dropout_rate = 0.1;  // applied to the first two hidden layers, train only
  double lambda = 1.0;        // weight of the supervised cross-entropy term
  double epsilon = 0.1;       // KL reference probability, must lie in (0, 0.5)
  GibsLoss loss = GibsLoss::EntropyCe;
  double learning_rate = 1e-3;
  int epochs = 50;
  int patience = 5;       // epochs without validation improvement before stopping
  double val_split = 0.2;  // fraction of examples held out for validation
  std::uint64_t rng_seed = 0;
  std::shared_ptr<const EmbeddingProvider> embedder;

  void validate_or_throw() const;  // Error{Usage, "bad_gibs_config"}
};

// Parameter blocks in their fixed declaration order; initialization draws,
// optimizer state, serialization, and gradient layouts all follow it.
struct GibsParams {
  std::vector<double> w_node, b_node;      // hidden x embed, hidden
  std::vector<double> w_edge, b_edge;      // hidden x embed, hidden
  std::vector<double> w_layer1, b_layer1;  // hidden x hidden, hidden
  std::vector<double> w_layer2, b_layer2;  // hidden x hidden, hidden
  std::vector<double> w_mask, b_mask;      // 2*hidden, 1

  static GibsParams zeros(int embed_dim, int hidden_dim);
  std::vector<std::vector<double>*> blocks();
  std::vector<const std::vector<double>*> blocks() const;
};

struct GibsModel {
  int embed_dim = 0;
  int hidden_dim = 0;
  GibsParams params;
};

// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)) drawn in declaration order,
// biases zero.
GibsModel init_model(const GibsConfig& config, Rng& rng);

// Per-step mask probabilities in evaluation mode (no dropout).
std::vector<double> gibs_score(const GibsModel& model, const ReasoningGraph& graph,
                               const EmbeddingProvider& embedder);

// Loss and analytic parameter gradients, both in evaluation mode. `mask`
// holds one consensus value in [0, 1] per step.
double gibs_loss(const GibsModel& model, const ReasoningGraph& graph,
                 std::span<const double> mask, const GibsConfig& config);
GibsParams gibs_grad(const GibsModel& model, const ReasoningGraph& graph,
                     std::span<const double> mask, const GibsConfig& config);

struct TrainExample {
  ReasoningGraph graph;
  std::vector<double> mask;
};

struct TrainingHistory {
  std::vector<double> train_loss;  // mean per-graph loss, one entry per epoch
  std::vector<double> val_loss;    // empty when no validation split
  bool stopped_early = false;
  double wall_time_s = 0.0;  // measured but never serialized: reruns stay byte-identical
};

// JSON view of a history: train_loss, val_loss, stopped_early only.
std::string history_to_json(const TrainingHistory& history);

// Adam (beta1 0.9, beta2 0.999, eps 1e-8), one step per graph, seeded shuffle
// and dropout streams, early stopping on validation loss, best-validation
// parameters restored.
std::pair<GibsModel, TrainingHistory> gibs_train(const GibsConfig& config,
                                                 std::span<const TrainExample> examples);

struct GradCheckReport {
  double max_rel_err = 0.0;
  long long compared = 0;  // parameter coordinates checked
  bool passed = false;
};

// Central-difference verification of the analytic gradients over fresh
// models: rel err = |a - fd| / max(1, |a|, |fd|).
GradCheckReport grad_check(const GibsConfig& config, std::span<const TrainExample> examples,
                           double step = 1e-5, double tolerance = 1e-4);

// Binary model file: magic, a one-line JSON header, then the parameter blocks
// as little-endian doubles in declaration order.
void save_model(const GibsModel& model, const std::string& path);
GibsModel load_model(const std::string& path);
std::vector<std::uint8_t> model_to_bytes(const GibsModel& model);
GibsModel model_from_bytes(std::span<const std::uint8_t> bytes);

}  // namespace stepconf
