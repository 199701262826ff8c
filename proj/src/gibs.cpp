#include "stepconf/gibs.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>

#include <fmt/format.h>
#include <json.hpp>

#include "stepconf/error.hpp"
#include "stepconf/io.hpp"

namespace stepconf {

namespace {

constexpr double kProbFloor = 1e-7;
constexpr char kModelMagic[8] = {'G', 'I', 'B', 'S', 'M', 'D', 'L', '1'};

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

double clamp_prob(double p) { return std::clamp(p, kProbFloor, 1.0 - kProbFloor); }

// y = W x + b with W row-major (rows x cols).
void affine(const std::vector<double>& w, const std::vector<double>& b,
            const std::vector<double>& x, int rows, int cols, std::vector<double>& y) {
  y.assign(static_cast<std::size_t>(rows), 0.0);
  for (int r = 0; r < rows; ++r) {
    double acc = b[static_cast<std::size_t>(r)];
    const double* row = w.data() + static_cast<std::size_t>(r) * static_cast<std::size_t>(cols);
    for (int c = 0; c < cols; ++c) acc += row[c] * x[static_cast<std::size_t>(c)];
    y[static_cast<std::size_t>(r)] = acc;
  }
}

std::vector<double> relu(const std::vector<double>& x) {
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  return y;
}

struct EmbeddedGraph {
  std::size_t n = 0;
  std::vector<std::vector<double>> node_vec, edge_vec;
  std::vector<std::vector<int>> hood;  // N(j) union {j}, ascending
};

EmbeddedGraph embed_graph(const ReasoningGraph& graph, const EmbeddingProvider& embedder,
                          int embed_dim) {
  if (embedder.dimension() != embed_dim) {
    throw Error(ErrKind::Usage, "dimension_mismatch",
                fmt::format("embedder dimension {} does not match model dimension {}",
                            embedder.dimension(), embed_dim));
  }
  EmbeddedGraph eg;
  eg.n = graph.steps.size();
  eg.node_vec.reserve(eg.n);
  eg.edge_vec.reserve(eg.n);
  eg.hood.assign(eg.n, {});
  for (std::size_t j = 0; j < eg.n; ++j) {
    eg.node_vec.push_back(embedder.embed(graph.steps[j].node_text));
    eg.edge_vec.push_back(embedder.embed(graph.steps[j].edge_text));
    eg.hood[j].push_back(static_cast<int>(j));
  }
  for (std::size_t j = 0; j < eg.n; ++j) {
    for (int dep : graph.steps[j].depends_on) {
      eg.hood[j].push_back(dep);
      eg.hood[static_cast<std::size_t>(dep)].push_back(static_cast<int>(j));
    }
  }
  for (auto& hood : eg.hood) {
    std::sort(hood.begin(), hood.end());
    hood.erase(std::unique(hood.begin(), hood.end()), hood.end());
  }
  return eg;
}

struct ForwardCache {
  std::vector<std::vector<double>> pre0, h0, drop0, d0;
  std::vector<std::vector<double>> q1, pre1, h1, drop1, d1;
  std::vector<std::vector<double>> q2, pre2, h2;
  std::vector<std::vector<double>> preg, g;
  std::vector<double> a, p;
};

// Mean of the previous layer over the step's closed neighborhood.
void aggregate_hood(const EmbeddedGraph& eg, const std::vector<std::vector<double>>& in, int h,
                    std::vector<std::vector<double>>& out) {
  out.assign(eg.n, std::vector<double>(static_cast<std::size_t>(h), 0.0));
  for (std::size_t j = 0; j < eg.n; ++j) {
    for (int k : eg.hood[j]) {
      const std::vector<double>& src = in[static_cast<std::size_t>(k)];
      for (int r = 0; r < h; ++r) out[j][static_cast<std::size_t>(r)] += src[static_cast<std::size_t>(r)];
    }
    const double inv = 1.0 / static_cast<double>(eg.hood[j].size());
    for (int r = 0; r < h; ++r) out[j][static_cast<std::size_t>(r)] *= inv;
  }
}

// Keep-scales per unit: 0 for dropped units, 1/keep otherwise (inverted
// scaling). All ones in evaluation mode.
void draw_dropout(std::size_t n, int h, double rate, Rng* rng,
                  std::vector<std::vector<double>>& scales) {
  scales.assign(n, std::vector<double>(static_cast<std::size_t>(h), 1.0));
  if (rng == nullptr || rate <= 0.0) return;
  const double inv_keep = 1.0 / (1.0 - rate);
  for (std::size_t j = 0; j < n; ++j) {
    for (int r = 0; r < h; ++r) {
      scales[j][static_cast<std::size_t>(r)] = rng->bernoulli(rate) ? 0.0 : inv_keep;
    }
  }
}

void apply_scales(const std::vector<std::vector<double>>& in,
                  const std::vector<std::vector<double>>& scales,
                  std::vector<std::vector<double>>& out) {
  out.resize(in.size());
  for (std::size_t j = 0; j < in.size(); ++j) {
    out[j].resize(in[j].size());
    for (std::size_t r = 0; r < in[j].size(); ++r) out[j][r] = in[j][r] * scales[j][r];
  }
}

// `dropout_rng == nullptr` means evaluation mode.
ForwardCache forward_embedded(const GibsModel& model, const EmbeddedGraph& eg,
                              double dropout_rate, Rng* dropout_rng) {
  const int h = model.hidden_dim;
  const int d = model.embed_dim;
  const GibsParams& w = model.params;
  ForwardCache c;
  c.pre0.resize(eg.n);
  c.h0.resize(eg.n);
  for (std::size_t j = 0; j < eg.n; ++j) {
    affine(w.w_node, w.b_node, eg.node_vec[j], h, d, c.pre0[j]);
    c.h0[j] = relu(c.pre0[j]);
  }
  draw_dropout(eg.n, h, dropout_rate, dropout_rng, c.drop0);
  apply_scales(c.h0, c.drop0, c.d0);

  aggregate_hood(eg, c.d0, h, c.q1);
  c.pre1.resize(eg.n);
  c.h1.resize(eg.n);
  for (std::size_t j = 0; j < eg.n; ++j) {
    affine(w.w_layer1, w.b_layer1, c.q1[j], h, h, c.pre1[j]);
    c.h1[j] = relu(c.pre1[j]);
  }
  draw_dropout(eg.n, h, dropout_rate, dropout_rng, c.drop1);
  apply_scales(c.h1, c.drop1, c.d1);

  aggregate_hood(eg, c.d1, h, c.q2);
  c.pre2.resize(eg.n);
  c.h2.resize(eg.n);
  for (std::size_t j = 0; j < eg.n; ++j) {
    affine(w.w_layer2, w.b_layer2, c.q2[j], h, h, c.pre2[j]);
    c.h2[j] = relu(c.pre2[j]);
  }

  c.preg.resize(eg.n);
  c.g.resize(eg.n);
  for (std::size_t j = 0; j < eg.n; ++j) {
    affine(w.w_edge, w.b_edge, eg.edge_vec[j], h, d, c.preg[j]);
    c.g[j] = relu(c.preg[j]);
  }

  c.a.resize(eg.n);
  c.p.resize(eg.n);
  for (std::size_t j = 0; j < eg.n; ++j) {
    double acc = w.b_mask[0];
    for (int r = 0; r < h; ++r) {
      acc += w.w_mask[static_cast<std::size_t>(r)] * c.h2[j][static_cast<std::size_t>(r)];
      acc += w.w_mask[static_cast<std::size_t>(h + r)] * c.g[j][static_cast<std::size_t>(r)];
    }
    c.a[j] = acc;
    c.p[j] = clamp_prob(sigmoid(acc));
  }
  return c;
}

double loss_from_probs(const std::vector<double>& p, std::span<const double> mask,
                       const GibsConfig& config) {
  double total = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    const double pj = p[j];
    const double mj = mask[j];
    const double ce = -(mj * std::log(pj) + (1.0 - mj) * std::log(1.0 - pj));
    if (config.loss == GibsLoss::EntropyCe) {
      total += -(pj * std::log(pj) + (1.0 - pj) * std::log(1.0 - pj));
    } else {
      total += pj * std::log(pj / config.epsilon) +
               (1.0 - pj) * std::log((1.0 - pj) / (1.0 - config.epsilon));
    }
    total += config.lambda * ce;
  }
  return total;
}

// dL/da per step; the clamp on p is treated as the identity.
double logit_grad(double p, double m, const GibsConfig& config) {
  if (config.loss == GibsLoss::EntropyCe) {
    return p * (1.0 - p) * std::log((1.0 - p) / p) + config.lambda * (p - m);
  }
  const double eps = config.epsilon;
  return p * (1.0 - p) * std::log(p * (1.0 - eps) / (eps * (1.0 - p))) +
         config.lambda * (p - m);
}

void backward_embedded(const GibsModel& model, const EmbeddedGraph& eg, const ForwardCache& c,
                       std::span<const double> mask, const GibsConfig& config,
                       GibsParams& grads) {
  const int h = model.hidden_dim;
  const int d = model.embed_dim;
  const auto hs = static_cast<std::size_t>(h);
  const GibsParams& w = model.params;

  std::vector<double> s(eg.n);
  for (std::size_t j = 0; j < eg.n; ++j) s[j] = logit_grad(c.p[j], mask[j], config);

  // Readout and the edge branch.
  std::vector<std::vector<double>> dh2(eg.n, std::vector<double>(hs, 0.0));
  for (std::size_t j = 0; j < eg.n; ++j) {
    grads.b_mask[0] += s[j];
    for (int r = 0; r < h; ++r) {
      const auto rs = static_cast<std::size_t>(r);
      grads.w_mask[rs] += s[j] * c.h2[j][rs];
      grads.w_mask[hs + rs] += s[j] * c.g[j][rs];
      dh2[j][rs] = s[j] * w.w_mask[rs];
      const double dg = s[j] * w.w_mask[hs + rs];
      if (c.preg[j][rs] > 0.0) {
        const double dpre = dg;
        for (int col = 0; col < d; ++col) {
          grads.w_edge[rs * static_cast<std::size_t>(d) + static_cast<std::size_t>(col)] +=
              dpre * eg.edge_vec[j][static_cast<std::size_t>(col)];
        }
        grads.b_edge[rs] += dpre;
      }
    }
  }

  // Layer 2 back to the dropped layer-1 activations.
  std::vector<std::vector<double>> dd1(eg.n, std::vector<double>(hs, 0.0));
  for (std::size_t j = 0; j < eg.n; ++j) {
    std::vector<double> dpre2(hs, 0.0);
    for (int r = 0; r < h; ++r) {
      const auto rs = static_cast<std::size_t>(r);
      if (c.pre2[j][rs] > 0.0) dpre2[rs] = dh2[j][rs];
    }
    for (int r = 0; r < h; ++r) {
      const auto rs = static_cast<std::size_t>(r);
      if (dpre2[rs] == 0.0) continue;
      for (int col = 0; col < h; ++col) {
        grads.w_layer2[rs * hs + static_cast<std::size_t>(col)] +=
            dpre2[rs] * c.q2[j][static_cast<std::size_t>(col)];
      }
      grads.b_layer2[rs] += dpre2[rs];
    }
    std::vector<double> dq2(hs, 0.0);
    for (int r = 0; r < h; ++r) {
      const auto rs = static_cast<std::size_t>(r);
      if (dpre2[rs] == 0.0) continue;
      for (int col = 0; col < h; ++col) {
        dq2[static_cast<std::size_t>(col)] += w.w_layer2[rs * hs + static_cast<std::size_t>(col)] * dpre2[rs];
      }
    }
    const double inv = 1.0 / static_cast<double>(eg.hood[j].size());
    for (int k : eg.hood[j]) {
      for (int r = 0; r < h; ++r) {
        dd1[static_cast<std::size_t>(k)][static_cast<std::size_t>(r)] +=
            dq2[static_cast<std::size_t>(r)] * inv;
      }
    }
  }

  // Layer 1 back to the dropped layer-0 activations.
  std::vector<std::vector<double>> dd0(eg.n, std::vector<double>(hs, 0.0));
  for (std::size_t j = 0; j < eg.n; ++j) {
    std::vector<double> dpre1(hs, 0.0);
    for (int r = 0; r < h; ++r) {
      const auto rs = static_cast<std::size_t>(r);
      const double dh1 = dd1[j][rs] * c.drop1[j][rs];
      if (c.pre1[j][rs] > 0.0) dpre1[rs] = dh1;
    }
    for (int r = 0; r < h; ++r) {
      const auto rs = static_cast<std::size_t>(r);
      if (dpre1[rs] == 0.0) continue;
      for (int col = 0; col < h; ++col) {
        grads.w_layer1[rs * hs + static_cast<std::size_t>(col)] +=
            dpre1[rs] * c.q1[j][static_cast<std::size_t>(col)];
      }
      grads.b_layer1[rs] += dpre1[rs];
    }
    std::vector<double> dq1(hs, 0.0);
    for (int r = 0; r < h; ++r) {
      const auto rs = static_cast<std::size_t>(r);
      if (dpre1[rs] == 0.0) continue;
      for (int col = 0; col < h; ++col) {
        dq1[static_cast<std::size_t>(col)] += w.w_layer1[rs * hs + static_cast<std::size_t>(col)] * dpre1[rs];
      }
    }
    const double inv = 1.0 / static_cast<double>(eg.hood[j].size());
    for (int k : eg.hood[j]) {
      for (int r = 0; r < h; ++r) {
        dd0[static_cast<std::size_t>(k)][static_cast<std::size_t>(r)] +=
            dq1[static_cast<std::size_t>(r)] * inv;
      }
    }
  }

  // Node encoder.
  for (std::size_t j = 0; j < eg.n; ++j) {
    for (int r = 0; r < h; ++r) {
      const auto rs = static_cast<std::size_t>(r);
      const double dh0 = dd0[j][rs] * c.drop0[j][rs];
      if (c.pre0[j][rs] <= 0.0 || dh0 == 0.0) continue;
      for (int col = 0; col < d; ++col) {
        grads.w_node[rs * static_cast<std::size_t>(d) + static_cast<std::size_t>(col)] +=
            dh0 * eg.node_vec[j][static_cast<std::size_t>(col)];
      }
      grads.b_node[rs] += dh0;
    }
  }
}

void validate_mask(const ReasoningGraph& graph, std::span<const double> mask) {
  if (mask.size() != graph.steps.size()) {
    throw Error(ErrKind::Data, "mask_length_mismatch",
                fmt::format("mask holds {} values for {} steps", mask.size(), graph.steps.size()),
                {{"trajectory_id", graph.trajectory_id}});
  }
  for (double v : mask) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw Error(ErrKind::Data, "bad_mask_value",
                  fmt::format("mask value {} outside [0, 1]", v),
                  {{"trajectory_id", graph.trajectory_id}});
    }
  }
}

const EmbeddingProvider& require_embedder(const GibsConfig& config) {
  if (!config.embedder) {
    throw Error(ErrKind::Usage, "missing_embedder", "the configuration has no embedder");
  }
  return *config.embedder;
}

struct AdamState {
  GibsParams m, v;
  long long t = 0;
};

void adam_step(GibsParams& params, const GibsParams& grads, AdamState& state, double lr) {
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  ++state.t;
  const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(state.t));
  auto pb = params.blocks();
  auto gb = grads.blocks();
  auto mb = state.m.blocks();
  auto vb = state.v.blocks();
  for (std::size_t b = 0; b < pb.size(); ++b) {
    for (std::size_t i = 0; i < pb[b]->size(); ++i) {
      const double g = (*gb[b])[i];
      double& m = (*mb[b])[i];
      double& v = (*vb[b])[i];
      m = kBeta1 * m + (1.0 - kBeta1) * g;
      v = kBeta2 * v + (1.0 - kBeta2) * g * g;
      (*pb[b])[i] -= lr * (m / c1) / (std::sqrt(v / c2) + kEps);
    }
  }
}

}  // namespace

void GibsConfig::validate_or_throw() const {
  auto fail = [](const std::string& message) {
    throw Error(ErrKind::Usage, "bad_gibs_config", message);
  };
  if (embed_dim < 1) fail("embed_dim must be positive");
  if (hidden_dim < 1) fail("hidden_dim must be positive");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) fail("dropout_rate must lie in [0, 1)");
  if (lambda < 0.0) fail("lambda must be non-negative");
  if (!(epsilon > 0.0 && epsilon < 0.5)) fail("epsilon must lie in (0, 0.5)");
  if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
  if (epochs < 1) fail("epochs must be positive");
  if (patience < 1) fail("patience must be positive");
  if (!(val_split >= 0.0 && val_split < 1.0)) fail("val_split must lie in [0, 1)");
}

GibsParams GibsParams::zeros(int embed_dim, int hidden_dim) {
  const auto d = static_cast<std::size_t>(embed_dim);
  const auto h = static_cast<std::size_t>(hidden_dim);
  GibsParams p;
  p.w_node.assign(h * d, 0.0);
  p.b_node.assign(h, 0.0);
  p.w_edge.assign(h * d, 0.0);
  p.b_edge.assign(h, 0.0);
  p.w_layer1.assign(h * h, 0.0);
  p.b_layer1.assign(h, 0.0);
  p.w_layer2.assign(h * h, 0.0);
  p.b_layer2.assign(h, 0.0);
  p.w_mask.assign(2 * h, 0.0);
  p.b_mask.assign(1, 0.0);
  return p;
}

std::vector<std::vector<double>*> GibsParams::blocks() {
  return {&w_node, &b_node, &w_edge, &b_edge, &w_layer1,
          &b_layer1, &w_layer2, &b_layer2, &w_mask, &b_mask};
}

std::vector<const std::vector<double>*> GibsParams::blocks() const {
  return {&w_node, &b_node, &w_edge, &b_edge, &w_layer1,
          &b_layer1, &w_layer2, &b_layer2, &w_mask, &b_mask};
}

GibsModel init_model(const GibsConfig& config, Rng& rng) {
  config.validate_or_throw();
  GibsModel model;
  model.embed_dim = config.embed_dim;
  model.hidden_dim = config.hidden_dim;
  model.params = GibsParams::zeros(config.embed_dim, config.hidden_dim);
  auto fill = [&rng](std::vector<double>& w, int fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : w) v = rng.uniform(-bound, bound);
  };
  // Weight blocks draw in declaration order; biases stay zero.
  fill(model.params.w_node, config.embed_dim);
  fill(model.params.w_edge, config.embed_dim);
  fill(model.params.w_layer1, config.hidden_dim);
  fill(model.params.w_layer2, config.hidden_dim);
  fill(model.params.w_mask, 2 * config.hidden_dim);
  return model;
}

std::vector<double> gibs_score(const GibsModel& model, const ReasoningGraph& graph,
                               const EmbeddingProvider& embedder) {
  EmbeddedGraph eg = embed_graph(graph, embedder, model.embed_dim);
  ForwardCache cache = forward_embedded(model, eg, 0.0, nullptr);
  return cache.p;
}

double gibs_loss(const GibsModel& model, const ReasoningGraph& graph,
                 std::span<const double> mask, const GibsConfig& config) {
  validate_mask(graph, mask);
  EmbeddedGraph eg = embed_graph(graph, require_embedder(config), model.embed_dim);
  ForwardCache cache = forward_embedded(model, eg, 0.0, nullptr);
  return loss_from_probs(cache.p, mask, config);
}

GibsParams gibs_grad(const GibsModel& model, const ReasoningGraph& graph,
                     std::span<const double> mask, const GibsConfig& config) {
  validate_mask(graph, mask);
  EmbeddedGraph eg = embed_graph(graph, require_embedder(config), model.embed_dim);
  ForwardCache cache = forward_embedded(model, eg, 0.0, nullptr);
  GibsParams grads = GibsParams::zeros(model.embed_dim, model.hidden_dim);
  backward_embedded(model, eg, cache, mask, config, grads);
  return grads;
}

std::string history_to_json(const TrainingHistory& history) {
  nlohmann::json j;
  j["stopped_early"] = history.stopped_early;
  j["train_loss"] = history.train_loss;
  j["val_loss"] = history.val_loss;
  return j.dump() + "\n";
}

std::pair<GibsModel, TrainingHistory> gibs_train(const GibsConfig& config,
                                                 std::span<const TrainExample> examples) {
  config.validate_or_throw();
  const EmbeddingProvider& embedder = require_embedder(config);
  if (examples.empty()) {
    throw Error(ErrKind::Data, "no_training_data", "training needs at least one example");
  }

  std::vector<EmbeddedGraph> embedded;
  embedded.reserve(examples.size());
  for (const TrainExample& example : examples) {
    validate_mask(example.graph, example.mask);
    embedded.push_back(embed_graph(example.graph, embedder, config.embed_dim));
  }

  Rng root(config.rng_seed);
  Rng init_rng = root.fork(1);
  Rng shuffle_rng = root.fork(2);
  Rng dropout_rng = root.fork(3);
  GibsModel model = init_model(config, init_rng);

  const auto n = static_cast<long long>(examples.size());
  std::vector<int> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  shuffle_rng.shuffle(order);
  long long val_count =
      std::clamp<long long>(std::llround(config.val_split * static_cast<double>(n)), 0, n - 1);
  std::vector<int> val_indices(order.begin(), order.begin() + val_count);
  std::vector<int> train_indices(order.begin() + val_count, order.end());

  AdamState adam;
  adam.m = GibsParams::zeros(config.embed_dim, config.hidden_dim);
  adam.v = GibsParams::zeros(config.embed_dim, config.hidden_dim);

  TrainingHistory history;
  double best_val = std::numeric_limits<double>::infinity();
  GibsParams best_params = model.params;
  int epochs_since_best = 0;
  const auto started = std::chrono::steady_clock::now();

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle_rng.shuffle(train_indices);
    double train_sum = 0.0;
    for (int idx : train_indices) {
      const auto i = static_cast<std::size_t>(idx);
      ForwardCache cache =
          forward_embedded(model, embedded[i], config.dropout_rate, &dropout_rng);
      train_sum += loss_from_probs(cache.p, examples[i].mask, config);
      GibsParams grads = GibsParams::zeros(config.embed_dim, config.hidden_dim);
      backward_embedded(model, embedded[i], cache, examples[i].mask, config, grads);
      adam_step(model.params, grads, adam, config.learning_rate);
    }
    history.train_loss.push_back(train_sum / static_cast<double>(train_indices.size()));

    if (val_count > 0) {
      double val_sum = 0.0;
      for (int idx : val_indices) {
        const auto i = static_cast<std::size_t>(idx);
        ForwardCache cache = forward_embedded(model, embedded[i], 0.0, nullptr);
        val_sum += loss_from_probs(cache.p, examples[i].mask, config);
      }
      const double val_mean = val_sum / static_cast<double>(val_count);
      history.val_loss.push_back(val_mean);
      if (val_mean < best_val) {
        best_val = val_mean;
        best_params = model.params;
        epochs_since_best = 0;
      } else if (++epochs_since_best >= config.patience) {
        history.stopped_early = true;
        break;
      }
    }
  }

  if (val_count > 0) model.params = best_params;
  history.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return {std::move(model), std::move(history)};
}

GradCheckReport grad_check(const GibsConfig& config, std::span<const TrainExample> examples,
                           double step, double tolerance) {
  config.validate_or_throw();
  const EmbeddingProvider& embedder = require_embedder(config);
  Rng root(config.rng_seed);
  Rng init_rng = root.fork(1);
  GibsModel model = init_model(config, init_rng);

  GradCheckReport report;
  for (const TrainExample& example : examples) {
    validate_mask(example.graph, example.mask);
    EmbeddedGraph eg = embed_graph(example.graph, embedder, config.embed_dim);
    ForwardCache cache = forward_embedded(model, eg, 0.0, nullptr);
    GibsParams analytic = GibsParams::zeros(config.embed_dim, config.hidden_dim);
    backward_embedded(model, eg, cache, example.mask, config, analytic);

    auto param_blocks = model.params.blocks();
    auto grad_blocks = analytic.blocks();
    for (std::size_t b = 0; b < param_blocks.size(); ++b) {
      for (std::size_t i = 0; i < param_blocks[b]->size(); ++i) {
        double& coord = (*param_blocks[b])[i];
        const double saved = coord;
        coord = saved + step;
        const double plus =
            loss_from_probs(forward_embedded(model, eg, 0.0, nullptr).p, example.mask, config);
        coord = saved - step;
        const double minus =
            loss_from_probs(forward_embedded(model, eg, 0.0, nullptr).p, example.mask, config);
        coord = saved;
        const double fd = (plus - minus) / (2.0 * step);
        const double analytic_value = (*grad_blocks[b])[i];
        const double rel = std::abs(analytic_value - fd) /
                           std::max({1.0, std::abs(analytic_value), std::abs(fd)});
        report.max_rel_err = std::max(report.max_rel_err, rel);
        ++report.compared;
      }
    }
  }
  report.passed = report.max_rel_err < tolerance;
  return report;
}

std::vector<std::uint8_t> model_to_bytes(const GibsModel& model) {
  nlohmann::json header{{"embed_dim", model.embed_dim}, {"hidden_dim", model.hidden_dim}};
  const std::string head = header.dump();
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kModelMagic, kModelMagic + sizeof(kModelMagic));
  out.insert(out.end(), head.begin(), head.end());
  out.push_back('\n');
  for (const std::vector<double>* block : model.params.blocks()) {
    for (double value : *block) {
      const auto bits = std::bit_cast<std::uint64_t>(value);
      for (int byte = 0; byte < 8; ++byte) {
        out.push_back(static_cast<std::uint8_t>((bits >> (8 * byte)) & 0xff));
      }
    }
  }
  return out;
}

GibsModel model_from_bytes(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < sizeof(kModelMagic) ||
      std::memcmp(bytes.data(), kModelMagic, sizeof(kModelMagic)) != 0) {
    throw Error(ErrKind::Data, "bad_model_magic", "not a model file");
  }
  std::size_t newline = sizeof(kModelMagic);
  while (newline < bytes.size() && bytes[newline] != '\n') ++newline;
  if (newline == bytes.size()) {
    throw Error(ErrKind::Data, "bad_model_header", "model header line is unterminated");
  }
  nlohmann::json header = nlohmann::json::parse(
      bytes.begin() + sizeof(kModelMagic), bytes.begin() + static_cast<std::ptrdiff_t>(newline),
      nullptr, /*allow_exceptions=*/false);
  if (!header.is_object() || !header.contains("embed_dim") || !header.contains("hidden_dim") ||
      !header["embed_dim"].is_number_integer() || !header["hidden_dim"].is_number_integer()) {
    throw Error(ErrKind::Data, "bad_model_header", "model header is not a valid dimension object");
  }
  const int embed_dim = header["embed_dim"].get<int>();
  const int hidden_dim = header["hidden_dim"].get<int>();
  if (embed_dim < 1 || hidden_dim < 1) {
    throw Error(ErrKind::Data, "bad_model_header", "model dimensions must be positive");
  }

  GibsModel model;
  model.embed_dim = embed_dim;
  model.hidden_dim = hidden_dim;
  model.params = GibsParams::zeros(embed_dim, hidden_dim);
  std::size_t total = 0;
  for (const std::vector<double>* block : model.params.blocks()) total += block->size();
  const std::size_t expected = total * 8;
  const std::size_t actual = bytes.size() - newline - 1;
  if (actual != expected) {
    throw Error(ErrKind::Data, "bad_model_size",
                fmt::format("parameter payload holds {} bytes, expected {}", actual, expected),
                {{"expected", expected}, {"actual", actual}});
  }
  std::size_t offset = newline + 1;
  for (std::vector<double>* block : model.params.blocks()) {
    for (double& value : *block) {
      std::uint64_t bits = 0;
      for (int byte = 0; byte < 8; ++byte) {
        bits |= static_cast<std::uint64_t>(bytes[offset + static_cast<std::size_t>(byte)])
                << (8 * byte);
      }
      value = std::bit_cast<double>(bits);
      offset += 8;
    }
  }
  return model;
}

void save_model(const GibsModel& model, const std::string& path) {
  const std::vector<std::uint8_t> bytes = model_to_bytes(model);
  write_file_atomic(path, std::string(bytes.begin(), bytes.end()));
}

GibsModel load_model(const std::string& path) {
  const std::string data = read_file(path);
  return model_from_bytes(
      std::span(reinterpret_cast<const std::uint8_t*>(data.data()), data.size()));
}

}  // namespace stepconf
