#include "stepconf/config.hpp"

#include <fmt/format.h>

#include "stepconf/error.hpp"
#include "stepconf/io.hpp"

namespace stepconf {

namespace {

[[noreturn]] void bail(const std::string& message) {
  throw Error(ErrKind::Usage, "bad_config", message);
}

const nlohmann::json* section(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) return nullptr;
  const nlohmann::json& s = j.at(key);
  if (!s.is_object()) bail(fmt::format("'{}' must be an object", key));
  return &s;
}

double get_double(const nlohmann::json& s, const char* sec, const char* key, double fallback) {
  if (!s.contains(key)) return fallback;
  if (!s.at(key).is_number()) bail(fmt::format("'{}.{}' must be a number", sec, key));
  return s.at(key).get<double>();
}

int get_int(const nlohmann::json& s, const char* sec, const char* key, int fallback) {
  if (!s.contains(key)) return fallback;
  if (!s.at(key).is_number_integer()) bail(fmt::format("'{}.{}' must be an integer", sec, key));
  return s.at(key).get<int>();
}

std::string get_string(const nlohmann::json& s, const char* sec, const char* key,
                       const std::string& fallback) {
  if (!s.contains(key)) return fallback;
  if (!s.at(key).is_string()) bail(fmt::format("'{}.{}' must be a string", sec, key));
  return s.at(key).get<std::string>();
}

ProviderKind parse_provider(const std::string& value, const char* where) {
  if (value == "exact") return ProviderKind::Exact;
  if (value == "jaccard") return ProviderKind::Jaccard;
  if (value == "cosine") return ProviderKind::Cosine;
  if (value == "remote") return ProviderKind::Remote;
  bail(fmt::format("'{}' must be one of exact, jaccard, cosine, remote (got '{}')", where, value));
}

}  // namespace

CliConfig CliConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) bail("the configuration root must be an object");
  CliConfig config;

  if (j.contains("rng_seed")) {
    if (!j.at("rng_seed").is_number_unsigned() && !j.at("rng_seed").is_number_integer()) {
      bail("'rng_seed' must be a non-negative integer");
    }
    const auto seed = j.at("rng_seed").get<std::int64_t>();
    if (seed < 0) bail("'rng_seed' must be a non-negative integer");
    config.rng_seed = static_cast<std::uint64_t>(seed);
  }

  if (const auto* s = section(j, "similarity")) {
    config.similarity = parse_provider(get_string(*s, "similarity", "kind", "exact"),
                                       "similarity.kind");
    const std::string mode = get_string(*s, "similarity", "step_text", "edge-and-node");
    if (mode == "edge-and-node") {
      config.step_text = StepTextMode::EdgeAndNode;
    } else if (mode == "edge-only") {
      config.step_text = StepTextMode::EdgeOnly;
    } else {
      bail(fmt::format("'similarity.step_text' must be edge-and-node or edge-only (got '{}')",
                       mode));
    }
    const std::string agg = get_string(*s, "similarity", "aggregator", "max");
    if (agg == "max") {
      config.aggregator = AggMode::Max;
    } else if (agg == "mean") {
      config.aggregator = AggMode::Mean;
    } else {
      bail(fmt::format("'similarity.aggregator' must be max or mean (got '{}')", agg));
    }
  }

  if (const auto* s = section(j, "embedding")) {
    const std::string kind = get_string(*s, "embedding", "kind", "hashed-bow");
    if (kind == "hashed-bow") {
      config.embedding = EmbeddingKind::HashedBow;
    } else if (kind == "table") {
      config.embedding = EmbeddingKind::Table;
    } else {
      bail(fmt::format("'embedding.kind' must be hashed-bow or table (got '{}')", kind));
    }
    config.embedding_dim = get_int(*s, "embedding", "dimension", config.embedding_dim);
    if (config.embedding_dim < 1) bail("'embedding.dimension' must be positive");
    config.table_path = get_string(*s, "embedding", "table_path", config.table_path);
    const std::string fallback = get_string(*s, "embedding", "fallback", "error");
    if (fallback == "error") {
      config.table_fallback = TableFallback::Error;
    } else if (fallback == "hash") {
      config.table_fallback = TableFallback::Hash;
    } else {
      bail(fmt::format("'embedding.fallback' must be error or hash (got '{}')", fallback));
    }
  }

  if (const auto* s = section(j, "entailment")) {
    config.entailment = parse_provider(get_string(*s, "entailment", "kind", "exact"),
                                       "entailment.kind");
    config.remote.base_url = get_string(*s, "entailment", "url", config.remote.base_url);
    config.remote.path = get_string(*s, "entailment", "path", config.remote.path);
    config.remote.timeout_ms = get_int(*s, "entailment", "timeout_ms", config.remote.timeout_ms);
    config.remote.max_inflight =
        get_int(*s, "entailment", "max_inflight", config.remote.max_inflight);
    if (config.remote.timeout_ms < 1) bail("'entailment.timeout_ms' must be positive");
    if (config.remote.max_inflight < 1) bail("'entailment.max_inflight' must be positive");
  }

  if (const auto* s = section(j, "mcs")) {
    config.tau_e = get_double(*s, "mcs", "tau_e", config.tau_e);
    config.tau_v = get_double(*s, "mcs", "tau_v", config.tau_v);
    config.mcs_seeds = get_int(*s, "mcs", "seeds", config.mcs_seeds);
    if (!(config.tau_e >= 0.0 && config.tau_e <= 1.0)) bail("'mcs.tau_e' must lie in [0, 1]");
    if (!(config.tau_v >= 0.0 && config.tau_v <= 1.0)) bail("'mcs.tau_v' must lie in [0, 1]");
    if (config.mcs_seeds < 1) bail("'mcs.seeds' must be positive");
    const std::string engine = get_string(*s, "mcs", "engine", "heuristic");
    if (engine == "heuristic") {
      config.engine = McsEngine::Heuristic;
    } else if (engine == "exact") {
      config.engine = McsEngine::Exact;
    } else {
      bail(fmt::format("'mcs.engine' must be heuristic or exact (got '{}')", engine));
    }
  }

  if (j.contains("anchor_strategy")) {
    if (!j.at("anchor_strategy").is_string()) bail("'anchor_strategy' must be a string");
    const auto strategy = j.at("anchor_strategy").get<std::string>();
    if (strategy == "correct-only") {
      config.anchors = AnchorStrategy::CorrectOnly;
    } else if (strategy == "all") {
      config.anchors = AnchorStrategy::AllTrajectories;
    } else if (strategy == "self-consistency") {
      config.anchors = AnchorStrategy::SelfConsistency;
    } else {
      bail(fmt::format(
          "'anchor_strategy' must be correct-only, all, or self-consistency (got '{}')",
          strategy));
    }
  }

  if (const auto* s = section(j, "gibs")) {
    config.gibs.hidden_dim = get_int(*s, "gibs", "hidden_dim", config.gibs.hidden_dim);
    config.gibs.dropout_rate = get_double(*s, "gibs", "dropout", config.gibs.dropout_rate);
    config.gibs.lambda = get_double(*s, "gibs", "lambda", config.gibs.lambda);
    config.gibs.epsilon = get_double(*s, "gibs", "epsilon", config.gibs.epsilon);
    config.gibs.learning_rate =
        get_double(*s, "gibs", "learning_rate", config.gibs.learning_rate);
    config.gibs.epochs = get_int(*s, "gibs", "epochs", config.gibs.epochs);
    config.gibs.patience = get_int(*s, "gibs", "patience", config.gibs.patience);
    config.gibs.val_split = get_double(*s, "gibs", "val_split", config.gibs.val_split);
    const std::string loss = get_string(*s, "gibs", "loss", "entropy-ce");
    if (loss == "entropy-ce") {
      config.gibs.loss = GibsLoss::EntropyCe;
    } else if (loss == "kl-ce") {
      config.gibs.loss = GibsLoss::KlCe;
    } else {
      bail(fmt::format("'gibs.loss' must be entropy-ce or kl-ce (got '{}')", loss));
    }
  }

  if (const auto* s = section(j, "synth")) {
    config.synth.num_questions =
        get_int(*s, "synth", "num_questions", config.synth.num_questions);
    config.synth.anchors_per_question =
        get_int(*s, "synth", "anchors_per_question", config.synth.anchors_per_question);
    config.synth.correct_per_question =
        get_int(*s, "synth", "correct_per_question", config.synth.correct_per_question);
    config.synth.wrong_per_question =
        get_int(*s, "synth", "wrong_per_question", config.synth.wrong_per_question);
    config.synth.distractor_rate =
        get_double(*s, "synth", "distractor_rate", config.synth.distractor_rate);
    const std::string corruption = get_string(*s, "synth", "corruption", "replace-anchor");
    if (corruption == "replace-anchor") {
      config.synth.corruption_mode = SynthConfig::Corruption::ReplaceAnchor;
    } else if (corruption == "extra-step") {
      config.synth.corruption_mode = SynthConfig::Corruption::ExtraStep;
    } else if (corruption == "wrong-result") {
      config.synth.corruption_mode = SynthConfig::Corruption::WrongResult;
    } else {
      bail(fmt::format(
          "'synth.corruption' must be replace-anchor, extra-step, or wrong-result (got '{}')",
          corruption));
    }
  }

  if (const auto* s = section(j, "feedback")) {
    config.feedback.tau_c = get_double(*s, "feedback", "tau_c", config.feedback.tau_c);
    config.feedback.bottom_k = get_int(*s, "feedback", "bottom_k", config.feedback.bottom_k);
    const std::string mode = get_string(*s, "feedback", "flag_mode", "threshold");
    if (mode == "threshold") {
      config.feedback.mode = FlagMode::Threshold;
    } else if (mode == "bottom-k") {
      config.feedback.mode = FlagMode::BottomK;
    } else {
      bail(fmt::format("'feedback.flag_mode' must be threshold or bottom-k (got '{}')", mode));
    }
    config.chat.base_url = get_string(*s, "feedback", "url", config.chat.base_url);
    config.chat.path = get_string(*s, "feedback", "path", config.chat.path);
    config.chat.model = get_string(*s, "feedback", "model", config.chat.model);
    config.chat.timeout_ms = get_int(*s, "feedback", "timeout_ms", config.chat.timeout_ms);
    if (config.chat.timeout_ms < 1) bail("'feedback.timeout_ms' must be positive");
  }

  config.apply_seed(config.rng_seed);
  config.gibs.embed_dim = config.embedding_dim;
  config.gibs.validate_or_throw();
  config.synth.validate_or_throw();
  config.feedback.validate_or_throw();
  return config;
}

CliConfig CliConfig::load(const std::string& path) {
  const std::string text = read_file(path);
  nlohmann::json j = nlohmann::json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) bail(fmt::format("'{}' is not valid JSON", path));
  return from_json(j);
}

void CliConfig::apply_seed(std::uint64_t seed) {
  rng_seed = seed;
  synth.rng_seed = seed;
  gibs.rng_seed = seed;
}

std::shared_ptr<const EmbeddingProvider> make_embedder(const CliConfig& config) {
  if (config.embedding == EmbeddingKind::HashedBow) {
    return std::make_shared<HashedBowEmbedding>(config.embedding_dim);
  }
  if (config.table_path.empty()) bail("'embedding.table_path' is required for a table embedder");
  return std::make_shared<TableEmbedding>(
      TableEmbedding::load(config.table_path, config.table_fallback));
}

namespace {

std::shared_ptr<const SimilarityProvider> make_provider(ProviderKind kind,
                                                        const CliConfig& config,
                                                        const char* where) {
  switch (kind) {
    case ProviderKind::Exact:
      return std::make_shared<ExactMatchSimilarity>();
    case ProviderKind::Jaccard:
      return std::make_shared<JaccardSimilarity>();
    case ProviderKind::Cosine:
      return std::make_shared<CosineEmbeddingSimilarity>(make_embedder(config));
    case ProviderKind::Remote:
      if (config.remote.base_url.empty()) {
        bail(fmt::format("'entailment.url' is required for a remote {} provider", where));
      }
      return std::make_shared<RemoteEntailment>(config.remote);
  }
  bail("unreachable provider kind");
}

}  // namespace

std::shared_ptr<const SimilarityProvider> make_similarity(const CliConfig& config) {
  return make_provider(config.similarity, config, "similarity");
}

std::shared_ptr<const SimilarityProvider> make_entailment(const CliConfig& config) {
  return make_provider(config.entailment, config, "entailment");
}

McsParams make_mcs_params(const CliConfig& config) {
  McsParams params;
  params.edge_threshold = config.tau_e;
  params.node_threshold = config.tau_v;
  params.seed_count = config.mcs_seeds;
  params.entailment = make_entailment(config);
  return params;
}

NibsConfig make_nibs_config(const CliConfig& config) {
  NibsConfig nibs;
  nibs.similarity = make_similarity(config);
  nibs.aggregator = config.aggregator;
  nibs.text_mode = config.step_text;
  return nibs;
}

GibsConfig make_gibs_config(const CliConfig& config) {
  GibsConfig gibs = config.gibs;
  gibs.embed_dim = config.embedding_dim;
  gibs.rng_seed = config.rng_seed;
  gibs.embedder = make_embedder(config);
  return gibs;
}

}  // namespace stepconf
