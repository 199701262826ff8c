#include "stepconf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "stepconf/error.hpp"
#include "stepconf/text.hpp"

namespace stepconf {

namespace {

void check_nonempty(const LabeledScores& data, const char* op) {
  if (data.scores.empty()) {
    throw Error(ErrKind::Data, "empty_input", fmt::format("{} on an empty score list", op));
  }
  if (data.scores.size() != data.labels.size()) {
    throw Error(ErrKind::Data, "length_mismatch",
                fmt::format("{}: {} scores vs {} labels", op, data.scores.size(),
                            data.labels.size()));
  }
}

std::pair<std::size_t, std::size_t> class_counts(const LabeledScores& data) {
  std::size_t pos = 0;
  for (int l : data.labels) pos += (l != 0);
  return {pos, data.labels.size() - pos};
}

// Indices ordered by (score desc, original index asc).
std::vector<std::size_t> desc_order(const LabeledScores& data) {
  std::vector<std::size_t> idx(data.scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return data.scores[a] > data.scores[b];
  });
  return idx;
}

}  // namespace

double auroc(const LabeledScores& data) {
  check_nonempty(data, "auroc");
  auto [pos, neg] = class_counts(data);
  if (pos == 0 || neg == 0) {
    throw Error(ErrKind::Data, "single_class", "auroc needs both positive and negative labels",
                {{"positives", pos}, {"negatives", neg}});
  }
  std::vector<std::size_t> idx(data.scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return data.scores[a] < data.scores[b];
  });
  // Rank sum of positives with average ranks across tied groups.
  double pos_rank_sum = 0.0;
  std::size_t i = 0;
  const std::size_t n = idx.size();
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && data.scores[idx[j + 1]] == data.scores[idx[i]]) ++j;
    const double avg_rank = static_cast<double>(i + 1 + j + 1) / 2.0;  // 1-based
    for (std::size_t k = i; k <= j; ++k) {
      if (data.labels[idx[k]] != 0) pos_rank_sum += avg_rank;
    }
    i = j + 1;
  }
  const double p = static_cast<double>(pos), q = static_cast<double>(neg);
  return (pos_rank_sum - p * (p + 1.0) / 2.0) / (p * q);
}

double aucpr(const LabeledScores& data) {
  check_nonempty(data, "aucpr");
  auto [pos, neg] = class_counts(data);
  (void)neg;
  if (pos == 0) {
    throw Error(ErrKind::Data, "single_class", "aucpr needs at least one positive label");
  }
  std::vector<std::size_t> idx = desc_order(data);
  double ap = 0.0;
  std::size_t tp = 0;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (data.labels[idx[k]] != 0) {
      ++tp;
      ap += static_cast<double>(tp) / static_cast<double>(k + 1);
    }
  }
  return ap / static_cast<double>(pos);
}

double acc_at(const LabeledScores& data, double c_percent) {
  check_nonempty(data, "acc_at");
  if (!(c_percent > 0.0) || c_percent > 100.0) {
    throw Error(ErrKind::Data, "bad_percent",
                fmt::format("acc_at needs 0 < c <= 100, got {}", c_percent));
  }
  const std::size_t n = data.scores.size();
  const auto keep = static_cast<std::size_t>(
      std::ceil(static_cast<long double>(n) * static_cast<long double>(c_percent) / 100.0L));
  std::vector<std::size_t> idx = desc_order(data);
  std::size_t hits = 0;
  for (std::size_t k = 0; k < keep; ++k) hits += (data.labels[idx[k]] != 0);
  return static_cast<double>(hits) / static_cast<double>(keep);
}

double ece(const LabeledScores& data, int bins) {
  check_nonempty(data, "ece");
  if (bins < 1) {
    throw Error(ErrKind::Data, "bad_bins", fmt::format("ece needs bins >= 1, got {}", bins));
  }
  std::vector<double> conf_sum(bins, 0.0), acc_sum(bins, 0.0);
  std::vector<std::size_t> count(bins, 0);
  for (std::size_t i = 0; i < data.scores.size(); ++i) {
    double s = data.scores[i];
    int b = std::clamp(static_cast<int>(s * bins), 0, bins - 1);  // last bin closed
    conf_sum[b] += s;
    acc_sum[b] += (data.labels[i] != 0) ? 1.0 : 0.0;
    ++count[b];
  }
  const double n = static_cast<double>(data.scores.size());
  double total = 0.0;
  for (int b = 0; b < bins; ++b) {
    if (count[b] == 0) continue;
    const double m = static_cast<double>(count[b]);
    total += (m / n) * std::abs(acc_sum[b] / m - conf_sum[b] / m);
  }
  return total;
}

MetricReport report(const LabeledScores& data, const ReportConfig& config) {
  MetricReport r;
  r.auroc = auroc(data);
  r.aucpr = aucpr(data);
  r.acc_at_c = config.acc_at_c;
  r.acc_at_value = acc_at(data, config.acc_at_c);
  r.ece_bins = config.ece_bins;
  r.ece_value = ece(data, config.ece_bins);
  r.n = data.scores.size();
  auto [pos, neg] = class_counts(data);
  (void)neg;
  r.positives = pos;
  return r;
}

nlohmann::json report_to_json(const MetricReport& r) {
  return nlohmann::json{
      {"auroc", r.auroc},
      {"aucpr", r.aucpr},
      {"acc_at", {{"c", r.acc_at_c}, {"value", r.acc_at_value}}},
      {"ece", {{"bins", r.ece_bins}, {"value", r.ece_value}}},
      {"n", r.n},
      {"positives", r.positives},
  };
}

std::string report_to_csv(const MetricReport& r) {
  return fmt::format("auroc,aucpr,acc_at_c,acc_at,ece_bins,ece,n,positives\n{},{},{},{},{},{},{},{}\n",
                     format_double(r.auroc), format_double(r.aucpr), format_double(r.acc_at_c),
                     format_double(r.acc_at_value), r.ece_bins, format_double(r.ece_value), r.n,
                     r.positives);
}

namespace {

LabeledScores collect_impl(std::span<const ScoredTrajectory> items, bool first_error_only) {
  LabeledScores out;
  for (const ScoredTrajectory& item : items) {
    const Trajectory& traj = *item.trajectory;
    const ConfidenceVector& conf = *item.scores;
    if (!traj.step_labels) {
      throw Error(ErrKind::Data, "missing_step_labels",
                  "trajectory lacks step labels required for evaluation",
                  {{"question_id", traj.graph.question_id},
                   {"trajectory_id", traj.graph.trajectory_id}});
    }
    const std::vector<bool>& labels = *traj.step_labels;
    if (conf.scores.size() != labels.size()) {
      throw Error(ErrKind::Data, "length_mismatch",
                  fmt::format("trajectory {} has {} scores for {} labeled steps",
                              traj.graph.trajectory_id, conf.scores.size(), labels.size()),
                  {{"question_id", traj.graph.question_id},
                   {"trajectory_id", traj.graph.trajectory_id}});
    }
    std::size_t keep = labels.size();
    if (first_error_only) {
      for (std::size_t j = 0; j < labels.size(); ++j) {
        if (!labels[j]) {
          keep = j + 1;  // retain the prefix up to and including the first error
          break;
        }
      }
    }
    for (std::size_t j = 0; j < keep; ++j) {
      out.scores.push_back(conf.scores[j]);
      out.labels.push_back(labels[j] ? 1 : 0);
    }
  }
  return out;
}

}  // namespace

LabeledScores collect_labeled(std::span<const ScoredTrajectory> items) {
  return collect_impl(items, false);
}

LabeledScores first_error_filter(std::span<const ScoredTrajectory> items) {
  return collect_impl(items, true);
}

}  // namespace stepconf
