#include "stepconf/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <mutex>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <httplib.h>
#include <json.hpp>

#include "stepconf/error.hpp"
#include "stepconf/io.hpp"
#include "stepconf/text.hpp"

namespace stepconf {

std::string step_text(const Step& step, StepTextMode mode) {
  if (mode == StepTextMode::EdgeOnly) return step.edge_text;
  return step.edge_text + " " + step.node_text;
}

double aggregate(AggMode mode, std::span<const double> scores) {
  if (scores.empty()) {
    throw Error(ErrKind::Data, "empty_aggregate", "cannot aggregate an empty score list");
  }
  if (mode == AggMode::Max) {
    return *std::max_element(scores.begin(), scores.end());
  }
  double sum = 0.0;
  for (double s : scores) sum += s;
  return sum / static_cast<double>(scores.size());
}

HashedBowEmbedding::HashedBowEmbedding(int dimension) : dim_(dimension) {
  if (dimension < 1) {
    throw Error(ErrKind::Usage, "bad_dimension",
                fmt::format("embedding dimension must be >= 1, got {}", dimension));
  }
}

std::vector<double> HashedBowEmbedding::embed(std::string_view text) const {
  std::vector<double> v(static_cast<std::size_t>(dim_), 0.0);
  for (const std::string& token : tokenize(text)) {
    v[fnv1a64(token) % static_cast<std::uint64_t>(dim_)] += 1.0;
  }
  double norm = 0.0;
  for (double x : v) norm += x * x;
  if (norm > 0.0) {
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
  }
  return v;
}

TableEmbedding::TableEmbedding(int dim, std::unordered_map<std::string, std::vector<double>> table,
                               TableFallback fallback)
    : dim_(dim), table_(std::move(table)), fallback_(fallback), hash_fallback_(dim) {}

TableEmbedding TableEmbedding::load(const std::filesystem::path& path, TableFallback fallback) {
  std::istringstream in(read_file(path));
  std::unordered_map<std::string, std::vector<double>> table;
  int dim = 0;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("text") || !j["text"].is_string() ||
        !j.contains("vector") || !j["vector"].is_array()) {
      throw Error(ErrKind::Data, "bad_embedding_row",
                  fmt::format("embedding table line {} is not {{\"text\",\"vector\"}}", line_no),
                  {{"path", path.string()}, {"line", line_no}});
    }
    std::vector<double> vec;
    for (const auto& x : j["vector"]) {
      if (!x.is_number()) {
        throw Error(ErrKind::Data, "bad_embedding_row",
                    fmt::format("embedding table line {} has a non-numeric component", line_no),
                    {{"path", path.string()}, {"line", line_no}});
      }
      vec.push_back(x.get<double>());
    }
    if (vec.empty()) {
      throw Error(ErrKind::Data, "bad_embedding_row",
                  fmt::format("embedding table line {} has an empty vector", line_no),
                  {{"path", path.string()}, {"line", line_no}});
    }
    if (dim == 0) {
      dim = static_cast<int>(vec.size());
    } else if (static_cast<int>(vec.size()) != dim) {
      throw Error(ErrKind::Data, "dimension_mismatch",
                  fmt::format("embedding table line {} has dimension {}, expected {}", line_no,
                              vec.size(), dim),
                  {{"path", path.string()}, {"line", line_no}});
    }
    table[j["text"].get<std::string>()] = std::move(vec);
  }
  if (table.empty()) {
    throw Error(ErrKind::Data, "empty_embedding_table",
                "embedding table holds no rows: " + path.string(), {{"path", path.string()}});
  }
  return TableEmbedding(dim, std::move(table), fallback);
}

std::vector<double> TableEmbedding::embed(std::string_view text) const {
  auto it = table_.find(std::string(text));
  if (it != table_.end()) return it->second;
  if (fallback_ == TableFallback::Hash) return hash_fallback_.embed(text);
  throw Error(ErrKind::Data, "embedding_miss",
              fmt::format("text not present in embedding table: \"{}\"", text));
}

double ExactMatchSimilarity::sim(std::string_view a, std::string_view b) const {
  return canonical_text(a) == canonical_text(b) ? 1.0 : 0.0;
}

double JaccardSimilarity::sim(std::string_view a, std::string_view b) const {
  std::vector<std::string> ta = tokenize(a), tb = tokenize(b);
  std::set<std::string> sa(ta.begin(), ta.end()), sb(tb.begin(), tb.end());
  if (sa.empty() && sb.empty()) return 1.0;
  std::size_t inter = 0;
  for (const auto& t : sa) inter += sb.count(t);
  std::size_t uni = sa.size() + sb.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

CosineEmbeddingSimilarity::CosineEmbeddingSimilarity(
    std::shared_ptr<const EmbeddingProvider> embedder)
    : embedder_(std::move(embedder)) {
  if (!embedder_) {
    throw Error(ErrKind::Usage, "missing_embedder", "cosine similarity requires an embedder");
  }
}

double CosineEmbeddingSimilarity::sim(std::string_view a, std::string_view b) const {
  std::vector<double> va = embedder_->embed(a), vb = embedder_->embed(b);
  if (va.size() != vb.size()) {
    throw Error(ErrKind::Data, "dimension_mismatch", "embedding dimensions disagree",
                {{"a", va.size()}, {"b", vb.size()}});
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < va.size(); ++i) {
    dot += va[i] * vb[i];
    na += va[i] * va[i];
    nb += vb[i] * vb[i];
  }
  double cosine = (na > 0.0 && nb > 0.0) ? dot / (std::sqrt(na) * std::sqrt(nb)) : 0.0;
  return std::clamp((1.0 + cosine) / 2.0, 0.0, 1.0);
}

struct RemoteEntailment::Impl {
  RemoteEntailmentConfig config;
  mutable httplib::Client client;
  mutable std::mutex mutex;
  mutable std::condition_variable cv;
  mutable int inflight = 0;

  explicit Impl(RemoteEntailmentConfig cfg) : config(std::move(cfg)), client(config.base_url) {
    client.set_connection_timeout(0, config.timeout_ms * 1000);
    client.set_read_timeout(config.timeout_ms / 1000, (config.timeout_ms % 1000) * 1000);
    client.set_write_timeout(config.timeout_ms / 1000, (config.timeout_ms % 1000) * 1000);
  }

  double call(std::string_view premise, std::string_view hypothesis) const {
    {
      std::unique_lock lock(mutex);
      cv.wait(lock, [&] { return inflight < config.max_inflight; });
      ++inflight;
    }
    struct Release {
      const Impl* impl;
      ~Release() {
        std::lock_guard lock(impl->mutex);
        --impl->inflight;
        impl->cv.notify_one();
      }
    } release{this};

    nlohmann::json body{{"premise", std::string(premise)},
                        {"hypothesis", std::string(hypothesis)}};
    const std::string payload = body.dump();
    std::string last_failure;
    for (int attempt = 0; attempt < 2; ++attempt) {  // initial try + one retry
      auto res = client.Post(config.path, payload, "application/json");
      if (!res) {
        last_failure = fmt::format("transport error: {}", httplib::to_string(res.error()));
        continue;
      }
      if (res->status != 200) {
        last_failure = fmt::format("http status {}", res->status);
        continue;
      }
      nlohmann::json reply = nlohmann::json::parse(res->body, nullptr, false);
      if (reply.is_discarded() || !reply.is_object() || !reply.contains("entail") ||
          !reply["entail"].is_number()) {
        last_failure = "malformed entailment reply";
        continue;
      }
      return std::clamp(reply["entail"].get<double>(), 0.0, 1.0);
    }
    throw Error(ErrKind::Provider, "entailment_transport",
                "remote entailment failed after retry: " + last_failure,
                {{"retryable", true}, {"url", config.base_url + config.path}});
  }
};

RemoteEntailment::RemoteEntailment(RemoteEntailmentConfig config)
    : impl_(std::make_unique<Impl>(std::move(config))) {}

RemoteEntailment::~RemoteEntailment() = default;

double RemoteEntailment::sim(std::string_view a, std::string_view b) const {
  return impl_->call(a, b);
}

double RemoteEntailment::entail(std::string_view premise, std::string_view hypothesis) const {
  return impl_->call(premise, hypothesis);
}

double sim_steps(const SimilarityProvider& provider, const Step& a, const Step& b,
                 StepTextMode mode) {
  return provider.sim(step_text(a, mode), step_text(b, mode));
}

}  // namespace stepconf
