#pragma once

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "stepconf/trace.hpp"

namespace stepconf {

// Text used when comparing whole steps.
enum class StepTextMode { EdgeAndNode, EdgeOnly };

std::string step_text(const Step& step, StepTextMode mode);

enum class AggMode { Max, Mean };

// Reduces a non-empty score list; throws Error{Data} on empty input.
double aggregate(AggMode mode, std::span<const double> scores);

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual int dimension() const = 0;
  virtual std::vector<double> embed(std::string_view text) const = 0;
};

// Feature hashing over lowercased alphanumeric tokens: bucket fnv1a64(token)
// mod dimension accumulates +1, then L2 normalization. Tokenless text maps to
// the zero vector.
class HashedBowEmbedding final : public EmbeddingProvider {
 public:
  explicit HashedBowEmbedding(int dimension);
  int dimension() const override { return dim_; }
  std::vector<double> embed(std::string_view text) const override;

 private:
  int dim_;
};

enum class TableFallback { Error, Hash };

// Lookup table loaded from JSON lines {"text": str, "vector": [float]}.
// Misses either raise Error{Data} or fall back to hashed bag-of-words.
class TableEmbedding final : public EmbeddingProvider {
 public:
  static TableEmbedding load(const std::filesystem::path& path, TableFallback fallback);
  int dimension() const override { return dim_; }
  std::vector<double> embed(std::string_view text) const override;

 private:
  TableEmbedding(int dim, std::unordered_map<std::string, std::vector<double>> table,
                 TableFallback fallback);
  int dim_;
  std::unordered_map<std::string, std::vector<double>> table_;
  TableFallback fallback_;
  HashedBowEmbedding hash_fallback_;
};

class SimilarityProvider {
 public:
  virtual ~SimilarityProvider() = default;

  // Symmetric text similarity in [0, 1].
  virtual double sim(std::string_view a, std::string_view b) const = 0;

  // Entailment score for (premise, hypothesis) in [0, 1]. Local proxies reuse
  // sim and are symmetric; remote scorers need not be.
  virtual double entail(std::string_view premise, std::string_view hypothesis) const {
    return sim(premise, hypothesis);
  }

  virtual bool symmetric() const { return true; }
};

// 1 when canonicalized texts are equal, else 0.
class ExactMatchSimilarity final : public SimilarityProvider {
 public:
  double sim(std::string_view a, std::string_view b) const override;
};

// |tokens(a) ∩ tokens(b)| / |tokens(a) ∪ tokens(b)|; two tokenless texts
// count as identical.
class JaccardSimilarity final : public SimilarityProvider {
 public:
  double sim(std::string_view a, std::string_view b) const override;
};

// (1 + cos(embed(a), embed(b))) / 2, clipped to [0, 1]. A zero embedding has
// no direction; its cosine against anything is taken as 0.
class CosineEmbeddingSimilarity final : public SimilarityProvider {
 public:
  explicit CosineEmbeddingSimilarity(std::shared_ptr<const EmbeddingProvider> embedder);
  double sim(std::string_view a, std::string_view b) const override;

 private:
  std::shared_ptr<const EmbeddingProvider> embedder_;
};

struct RemoteEntailmentConfig {
  std::string base_url;        // e.g. "http://127.0.0.1:8080"
  std::string path = "/entail";
  int timeout_ms = 10000;
  int max_inflight = 4;
};

// POSTs {"premise","hypothesis"} and reads {"entail": float}. One retry per
// call; persistent failure raises a retryable Error{Provider}.
class RemoteEntailment final : public SimilarityProvider {
 public:
  explicit RemoteEntailment(RemoteEntailmentConfig config);
  ~RemoteEntailment() override;
  double sim(std::string_view a, std::string_view b) const override;
  double entail(std::string_view premise, std::string_view hypothesis) const override;
  bool symmetric() const override { return false; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

double sim_steps(const SimilarityProvider& provider, const Step& a, const Step& b,
                 StepTextMode mode);

}  // namespace stepconf
