#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "stepconf/trace.hpp"

namespace stepconf {

struct LabeledScores {
  std::vector<double> scores;
  std::vector<int> labels;  // 0 or 1, aligned with scores
};

// Mann-Whitney AUROC with 0.5 credit for ties. Requires both classes.
double auroc(const LabeledScores& data);

// Average precision: rank by (score desc, original index asc); at every
// positive position add precision-at-that-rank, then divide by the positive
// count. Requires at least one positive.
double aucpr(const LabeledScores& data);

// Fraction of positive labels among the ceil(n*c/100) top-scored items
// (ties broken by original index). 0 < c_percent <= 100.
double acc_at(const LabeledScores& data, double c_percent);

// Expected calibration error over `bins` equal-width bins [k/bins,(k+1)/bins),
// last bin closed; empty bins are skipped.
double ece(const LabeledScores& data, int bins = 10);

struct ReportConfig {
  double acc_at_c = 80.0;
  int ece_bins = 10;
};

struct MetricReport {
  double auroc = 0.0;
  double aucpr = 0.0;
  double acc_at_c = 80.0;
  double acc_at_value = 0.0;
  int ece_bins = 10;
  double ece_value = 0.0;
  std::size_t n = 0;
  std::size_t positives = 0;
};

MetricReport report(const LabeledScores& data, const ReportConfig& config = {});
nlohmann::json report_to_json(const MetricReport& r);
std::string report_to_csv(const MetricReport& r);

struct ScoredTrajectory {
  const Trajectory* trajectory = nullptr;
  const ConfidenceVector* scores = nullptr;
};

// Pools (score, label) pairs across trajectories; every trajectory must carry
// step_labels and a score per step, otherwise Error{Data}.
LabeledScores collect_labeled(std::span<const ScoredTrajectory> items);

// Like collect_labeled, but inside every trajectory that contains an incorrect
// step only the prefix up to and including the first label-0 step is kept;
// fully correct trajectories are kept whole.
LabeledScores first_error_filter(std::span<const ScoredTrajectory> items);

}  // namespace stepconf
