#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "stepconf/error.hpp"
#include "stepconf/gibs.hpp"
#include "stepconf/rng.hpp"
#include "stepconf/similarity.hpp"
#include "stepconf/trace.hpp"

#include <json.hpp>

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

Step step(int index, std::string edge, std::string node, std::vector<int> deps = {}) {
  Step s;
  s.index = index;
  s.edge_text = std::move(edge);
  s.node_text = std::move(node);
  s.depends_on = std::move(deps);
  return s;
}

ReasoningGraph single_step_graph() {
  ReasoningGraph g;
  g.trajectory_id = "t00";
  g.steps.push_back(step(0, "a", "a"));
  return g;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double clamp_prob(double p) { return std::clamp(p, 1e-7, 1.0 - 1e-7); }

bool params_equal(const GibsParams& a, const GibsParams& b) {
  const auto blocks_a = a.blocks();
  const auto blocks_b = b.blocks();
  if (blocks_a.size() != blocks_b.size()) return false;
  for (std::size_t i = 0; i < blocks_a.size(); ++i) {
    if (*blocks_a[i] != *blocks_b[i]) return false;
  }
  return true;
}

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("stepconf-gibs-" + std::to_string(::getpid()) + "-" + std::to_string(counter()++));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

GibsConfig base_config(int embed_dim, int hidden_dim) {
  GibsConfig c;
  c.embed_dim = embed_dim;
  c.hidden_dim = hidden_dim;
  c.embedder = std::make_shared<HashedBowEmbedding>(embed_dim);
  return c;
}

}  // namespace

TEST_CASE("scores match a hand-computed forward pass") {
  // dim-2 hashed bag-of-words: "a" lands in bucket 0, "b" in bucket 1, so the
  // normalized embeddings are the two unit axes.
  ReasoningGraph g;
  g.trajectory_id = "t00";
  g.steps.push_back(step(0, "a", "a"));
  g.steps.push_back(step(1, "b", "b"));
  g.steps.push_back(step(2, "a", "a", {0}));

  GibsModel model;
  model.embed_dim = 2;
  model.hidden_dim = 1;
  model.params = GibsParams::zeros(2, 1);
  model.params.w_node = {1.0, 2.0};
  model.params.w_edge = {3.0, 5.0};
  model.params.w_layer1 = {1.0};
  model.params.w_layer2 = {1.0};
  model.params.w_mask = {1.0, 1.0};

  // Closed neighborhoods: {0,2}, {1}, {0,2}. Node stack: h0 = [1,2,1], both
  // unit-weight aggregation layers preserve it, edge head g = [3,5,3], so the
  // mask logits are [4,7,4].
  const auto p = gibs_score(model, g, HashedBowEmbedding(2));
  REQUIRE(p.size() == 3);
  CHECK(p[0] == doctest::Approx(sigmoid(4.0)).epsilon(1e-15));
  CHECK(p[1] == doctest::Approx(sigmoid(7.0)).epsilon(1e-15));
  CHECK(p[2] == doctest::Approx(sigmoid(4.0)).epsilon(1e-15));
}

TEST_CASE("an all-zero model scores one half everywhere") {
  GibsModel model;
  model.embed_dim = 4;
  model.hidden_dim = 3;
  model.params = GibsParams::zeros(4, 3);
  ReasoningGraph g;
  g.trajectory_id = "t00";
  g.steps.push_back(step(0, "first claim", "value one"));
  g.steps.push_back(step(1, "second claim", "value two", {0}));
  for (const double v : gibs_score(model, g, HashedBowEmbedding(4))) CHECK(v == 0.5);
}

TEST_CASE("the embedder dimension must match the model") {
  GibsModel model;
  model.embed_dim = 2;
  model.hidden_dim = 1;
  model.params = GibsParams::zeros(2, 1);
  const ReasoningGraph g = single_step_graph();
  CHECK(error_code([&] { gibs_score(model, g, HashedBowEmbedding(3)); }) ==
        "dimension_mismatch");
}

TEST_CASE("mask validation") {
  const GibsConfig config = base_config(2, 1);
  GibsModel model;
  model.embed_dim = 2;
  model.hidden_dim = 1;
  model.params = GibsParams::zeros(2, 1);
  const ReasoningGraph g = single_step_graph();
  const std::vector<double> too_long{0.5, 0.5};
  const std::vector<double> out_of_range{1.5};
  CHECK(error_code([&] { gibs_loss(model, g, too_long, config); }) == "mask_length_mismatch");
  CHECK(error_code([&] { gibs_loss(model, g, out_of_range, config); }) == "bad_mask_value");
}

TEST_CASE("loss values against closed forms") {
  const ReasoningGraph g = single_step_graph();
  Rng rng(515);
  for (int round = 0; round < 500; ++round) {
    const double logit = rng.uniform(-6.0, 6.0);
    const double m = rng.uniform();
    const double eps = rng.uniform(0.01, 0.49);
    const double lambda = rng.uniform(0.0, 3.0);

    GibsModel model;
    model.embed_dim = 1;
    model.hidden_dim = 1;
    model.params = GibsParams::zeros(1, 1);
    model.params.b_mask = {logit};

    GibsConfig ent_cfg = base_config(1, 1);
    ent_cfg.loss = GibsLoss::EntropyCe;
    ent_cfg.lambda = lambda;
    GibsConfig kl_cfg = ent_cfg;
    kl_cfg.loss = GibsLoss::KlCe;
    kl_cfg.epsilon = eps;

    const double p = clamp_prob(sigmoid(logit));
    const double entropy = -(p * std::log(p) + (1.0 - p) * std::log(1.0 - p));
    const double ce_to_eps = -(p * std::log(eps) + (1.0 - p) * std::log(1.0 - eps));
    const double ce_to_mask = -(m * std::log(p) + (1.0 - m) * std::log(1.0 - p));

    const std::vector<double> mask{m};
    const double ent_loss = gibs_loss(model, g, mask, ent_cfg);
    const double kl_loss = gibs_loss(model, g, mask, kl_cfg);

    CHECK(ent_loss == doctest::Approx(entropy + lambda * ce_to_mask).epsilon(1e-9));
    // KL(p || eps) decomposes into the cross entropy to eps minus the entropy.
    CHECK(kl_loss ==
          doctest::Approx(ce_to_eps - entropy + lambda * ce_to_mask).epsilon(1e-9));
    // The supervised terms cancel in the difference of the two losses.
    CHECK(kl_loss - ent_loss + 2.0 * entropy - ce_to_eps == doctest::Approx(0.0).epsilon(1e-9));
  }
}

TEST_CASE("analytic gradients agree with central differences") {
  std::vector<TrainExample> examples;
  Rng rng(99);
  {
    TrainExample e;
    e.graph.trajectory_id = "t00";
    e.graph.steps.push_back(step(0, "state the premise", "alpha"));
    e.graph.steps.push_back(step(1, "derive the lemma", "beta", {0}));
    e.graph.steps.push_back(step(2, "combine results", "gamma", {0, 1}));
    e.mask = {rng.uniform(), rng.uniform(), rng.uniform()};
    examples.push_back(std::move(e));
  }
  {
    TrainExample e;
    e.graph.trajectory_id = "t01";
    e.graph.steps.push_back(step(0, "recall a fact", "delta"));
    e.graph.steps.push_back(step(1, "conclude", "omega", {0}));
    e.mask = {rng.uniform(), rng.uniform()};
    examples.push_back(std::move(e));
  }

  for (const GibsLoss loss : {GibsLoss::EntropyCe, GibsLoss::KlCe}) {
    GibsConfig config = base_config(2, 3);
    config.loss = loss;
    config.lambda = 0.7;
    config.epsilon = 0.1;
    config.rng_seed = 17;
    const GradCheckReport report = grad_check(config, examples);
    // 2*h*d + 2*h^2 + 6*h + 1 = 49 coordinates per model.
    CHECK(report.compared >= 49);
    CHECK(report.max_rel_err < 1e-4);
    CHECK(report.passed);
  }
}

TEST_CASE("training fits a single graph when supervision dominates") {
  TrainExample e;
  e.graph.trajectory_id = "t00";
  e.graph.steps.push_back(step(0, "state the premise", "alpha value"));
  e.graph.steps.push_back(step(1, "make an error", "beta value", {0}));
  e.graph.steps.push_back(step(2, "conclude anyway", "gamma value", {1}));
  e.mask = {1.0, 0.0, 1.0};

  GibsConfig config = base_config(4, 8);
  config.lambda = 8.0;
  config.dropout_rate = 0.0;
  config.learning_rate = 0.05;
  config.epochs = 400;
  config.val_split = 0.0;
  config.rng_seed = 3;

  const std::vector<TrainExample> examples{e};
  const auto [model, history] = gibs_train(config, examples);
  CHECK(history.train_loss.front() > history.train_loss.back());

  const auto p = gibs_score(model, e.graph, *config.embedder);
  REQUIRE(p.size() == 3);
  for (std::size_t j = 0; j < 3; ++j) {
    CHECK(std::fabs(p[j] - e.mask[j]) < 0.15);
  }
}

TEST_CASE("early stopping restores the best validation parameters") {
  // Two copies of one graph with contradictory masks: whichever lands in the
  // validation split, training drives its loss monotonically up, so the best
  // epoch is the first one.
  std::vector<TrainExample> examples(2);
  for (auto& e : examples) e.graph = single_step_graph();
  examples[0].mask = {1.0};
  examples[1].mask = {0.0};

  GibsConfig config = base_config(2, 4);
  config.lambda = 4.0;
  config.dropout_rate = 0.0;
  config.learning_rate = 0.1;
  config.epochs = 10;
  config.patience = 1;
  config.val_split = 0.5;
  config.rng_seed = 5;

  const auto [stopped_model, stopped_history] = gibs_train(config, examples);
  CHECK(stopped_history.stopped_early);
  REQUIRE(stopped_history.train_loss.size() == 2);
  REQUIRE(stopped_history.val_loss.size() == 2);
  CHECK(stopped_history.val_loss[1] >= stopped_history.val_loss[0]);

  // A one-epoch run shares every random draw with the stopped run's first
  // epoch, so the restored parameters match it bit for bit.
  GibsConfig one_epoch = config;
  one_epoch.epochs = 1;
  const auto [reference_model, reference_history] = gibs_train(one_epoch, examples);
  CHECK(!reference_history.stopped_early);
  CHECK(reference_history.train_loss.size() == 1);
  CHECK(params_equal(stopped_model.params, reference_model.params));
}

TEST_CASE("a zero validation split trains for every epoch") {
  std::vector<TrainExample> examples(1);
  examples[0].graph = single_step_graph();
  examples[0].mask = {1.0};

  GibsConfig config = base_config(2, 2);
  config.epochs = 7;
  config.val_split = 0.0;
  const auto [model, history] = gibs_train(config, examples);
  CHECK(history.train_loss.size() == 7);
  CHECK(history.val_loss.empty());
  CHECK(!history.stopped_early);
}

TEST_CASE("history serialization excludes the wall clock") {
  TrainingHistory h;
  h.train_loss = {1.5, 1.25};
  h.val_loss = {2.0};
  h.stopped_early = true;
  h.wall_time_s = 42.0;
  const nlohmann::json j = nlohmann::json::parse(history_to_json(h));
  CHECK(j.size() == 3);
  CHECK(j.at("stopped_early") == true);
  CHECK(j.at("train_loss") == std::vector<double>({1.5, 1.25}));
  CHECK(j.at("val_loss") == std::vector<double>({2.0}));
  CHECK(!j.contains("wall_time_s"));
}

TEST_CASE("training configuration and input validation") {
  const std::vector<TrainExample> none;
  GibsConfig config = base_config(2, 2);
  CHECK(error_code([&] { gibs_train(config, none); }) == "no_training_data");

  std::vector<TrainExample> one(1);
  one[0].graph = single_step_graph();
  one[0].mask = {1.0};

  GibsConfig missing = config;
  missing.embedder = nullptr;
  CHECK(error_code([&] { gibs_train(missing, one); }) == "missing_embedder");

  GibsConfig mismatched = config;
  mismatched.embedder = std::make_shared<HashedBowEmbedding>(5);
  CHECK(error_code([&] { gibs_train(mismatched, one); }) == "dimension_mismatch");

  GibsConfig bad = config;
  bad.epsilon = 0.5;
  CHECK(error_code([&] { gibs_train(bad, one); }) == "bad_gibs_config");
  bad = config;
  bad.epochs = 0;
  CHECK(error_code([&] { gibs_train(bad, one); }) == "bad_gibs_config");
  bad = config;
  bad.val_split = 1.0;
  CHECK(error_code([&] { gibs_train(bad, one); }) == "bad_gibs_config");
  bad = config;
  bad.dropout_rate = 1.0;
  CHECK(error_code([&] { gibs_train(bad, one); }) == "bad_gibs_config");
  bad = config;
  bad.learning_rate = 0.0;
  CHECK(error_code([&] { gibs_train(bad, one); }) == "bad_gibs_config");
}

TEST_CASE("initialization is seeded, bounded, and bias-free") {
  GibsConfig config = base_config(4, 8);
  Rng a(3);
  Rng b(3);
  Rng c(4);
  const GibsModel ma = init_model(config, a);
  const GibsModel mb = init_model(config, b);
  const GibsModel mc = init_model(config, c);
  CHECK(params_equal(ma.params, mb.params));
  CHECK(!params_equal(ma.params, mc.params));

  for (const double v : ma.params.b_node) CHECK(v == 0.0);
  for (const double v : ma.params.b_layer1) CHECK(v == 0.0);
  for (const double v : ma.params.b_mask) CHECK(v == 0.0);
  const auto bounded = [](const std::vector<double>& w, int fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (const double v : w) {
      CHECK(v >= -bound);
      CHECK(v <= bound);
    }
  };
  bounded(ma.params.w_node, 4);
  bounded(ma.params.w_edge, 4);
  bounded(ma.params.w_layer1, 8);
  bounded(ma.params.w_layer2, 8);
  bounded(ma.params.w_mask, 16);
}

TEST_CASE("model files round-trip bit for bit") {
  GibsConfig config = base_config(3, 5);
  Rng rng(21);
  const GibsModel model = init_model(config, rng);

  TempDir dir;
  const std::string path = (dir.path / "model.bin").string();
  save_model(model, path);
  const GibsModel loaded = load_model(path);
  CHECK(loaded.embed_dim == 3);
  CHECK(loaded.hidden_dim == 5);
  CHECK(params_equal(model.params, loaded.params));

  const auto bytes = model_to_bytes(model);
  const GibsModel from_bytes = model_from_bytes(bytes);
  CHECK(params_equal(model.params, from_bytes.params));

  CHECK(error_code([&] { load_model((dir.path / "missing.bin").string()); }) == "file_open");
}

TEST_CASE("corrupted model bytes are rejected") {
  GibsConfig config = base_config(2, 2);
  Rng rng(8);
  const GibsModel model = init_model(config, rng);
  const auto bytes = model_to_bytes(model);

  auto mutated = bytes;
  mutated[0] ^= 0x01;
  CHECK(error_code([&] { model_from_bytes(mutated); }) == "bad_model_magic");

  mutated = bytes;
  mutated[8] = 'x';  // clobber the header's opening brace
  CHECK(error_code([&] { model_from_bytes(mutated); }) == "bad_model_header");

  mutated = bytes;
  mutated.pop_back();
  CHECK(error_code([&] { model_from_bytes(mutated); }) == "bad_model_size");

  mutated = bytes;
  mutated.push_back(0);
  CHECK(error_code([&] { model_from_bytes(mutated); }) == "bad_model_size");

  // Cut inside the header: the line never terminates.
  mutated.assign(bytes.begin(), bytes.begin() + 12);
  CHECK(error_code([&] { model_from_bytes(mutated); }) == "bad_model_header");

  CHECK(error_code([&] { model_from_bytes({}); }) == "bad_model_magic");
}
