#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include <json.hpp>

#include "stepconf/corpus.hpp"
#include "stepconf/gibs.hpp"
#include "stepconf/mcs.hpp"
#include "stepconf/nibs.hpp"
#include "stepconf/selfcorrect.hpp"
#include "stepconf/similarity.hpp"

namespace stepconf {

enum class ProviderKind { Exact, Jaccard, Cosine, Remote };
enum class EmbeddingKind { HashedBow, Table };

// One JSON file configures every subcommand; flags override fields. Absent
// keys keep the defaults below.
struct CliConfig {
  std::uint64_t rng_seed = 7;

  ProviderKind similarity = ProviderKind::Exact;
  StepTextMode step_text = StepTextMode::EdgeAndNode;
  AggMode aggregator = AggMode::Max;

  EmbeddingKind embedding = EmbeddingKind::HashedBow;
  int embedding_dim = 64;
  std::string table_path;
  TableFallback table_fallback = TableFallback::Error;

  ProviderKind entailment = ProviderKind::Exact;
  RemoteEntailmentConfig remote;

  double tau_e = 0.7;
  double tau_v = 0.7;
  int mcs_seeds = 10;
  McsEngine engine = McsEngine::Heuristic;
  AnchorStrategy anchors = AnchorStrategy::CorrectOnly;

  GibsConfig gibs;  // embed_dim/rng_seed/embedder filled by make_gibs_config
  SynthConfig synth;

  FeedbackConfig feedback;
  HttpChatConfig chat;

  // Errors are Error{Usage, "bad_config"} naming the offending key.
  static CliConfig from_json(const nlohmann::json& j);
  static CliConfig load(const std::string& path);

  // Global seed override: rewrites every seeded sub-config.
  void apply_seed(std::uint64_t seed);
};

std::shared_ptr<const EmbeddingProvider> make_embedder(const CliConfig& config);
std::shared_ptr<const SimilarityProvider> make_similarity(const CliConfig& config);
std::shared_ptr<const SimilarityProvider> make_entailment(const CliConfig& config);
McsParams make_mcs_params(const CliConfig& config);
NibsConfig make_nibs_config(const CliConfig& config);
GibsConfig make_gibs_config(const CliConfig& config);

}  // namespace stepconf
