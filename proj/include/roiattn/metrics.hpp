#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "roiattn/common.hpp"

namespace roiattn {

struct ScoredSet {
  std::vector<double> scores;
  std::vector<int> labels;
};

// need_both_classes covers AUC and recall-at-FPR, which are undefined on a
// single class.
void validate(const ScoredSet& s, bool need_both_classes);

// Probability that a random positive outscores a random negative, ties
// counted 1/2. Midrank (Mann-Whitney) implementation, O(n log n).
double roc_auc(const ScoredSet& s);

// Predict positive iff score >= threshold; F1 with the 0/0 -> 0 convention.
double f1(const ScoredSet& s, double threshold);

// Scans thresholds below/between/above the distinct scores; on F1 ties keeps
// the lowest threshold. Returns (best F1, threshold).
std::pair<double, double> best_f1(const ScoredSet& s);

// Largest recall achievable with empirical FPR <= fpr_target (conservative
// step-function reading of the ROC curve, no interpolation).
double recall_at_fpr(const ScoredSet& s, double fpr_target);

struct MetricReport {
  double auc = 0;
  double f1 = 0;
  double f1_threshold = 0;
  double r_at_01 = 0, r_at_03 = 0, r_at_05 = 0;
  std::size_t n_pos = 0, n_neg = 0;
};

MetricReport compute_metrics(const ScoredSet& s);

// {"auc":..., "f1":..., "f1_threshold":..., "r_at":{"0.1":...}, ...}
std::string to_json(const MetricReport& report);

}  // namespace roiattn
