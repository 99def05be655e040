#include "roiattn/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace roiattn {

void validate(const ScoredSet& s, bool need_both_classes) {
  if (s.scores.size() != s.labels.size())
    throw ValidationError("scores and labels must have equal length");
  if (s.scores.empty()) throw ValidationError("empty scored set");
  std::size_t pos = 0;
  for (std::size_t i = 0; i < s.labels.size(); ++i) {
    if (s.labels[i] != 0 && s.labels[i] != 1)
      throw ValidationError("labels must be 0 or 1");
    if (!std::isfinite(s.scores[i]))
      throw ValidationError("scores must be finite");
    pos += static_cast<std::size_t>(s.labels[i]);
  }
  if (need_both_classes && (pos == 0 || pos == s.labels.size()))
    throw ValidationError("AUC undefined: both classes required");
}

double roc_auc(const ScoredSet& s) {
  validate(s, true);
  const std::size_t n = s.scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    return s.scores[i] < s.scores[j];
  });

  // Midranks over tied groups; AUC = (rank sum of positives - n_pos(n_pos+1)/2)
  // / (n_pos * n_neg), which counts ties as one half exactly.
  double rank_sum_pos = 0;
  std::size_t n_pos = 0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && s.scores[order[j]] == s.scores[order[i]]) ++j;
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t t = i; t < j; ++t)
      if (s.labels[order[t]] == 1) {
        rank_sum_pos += midrank;
        ++n_pos;
      }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  return (rank_sum_pos -
          static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0) /
         (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double f1(const ScoredSet& s, double threshold) {
  validate(s, false);
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < s.scores.size(); ++i) {
    const bool pred = s.scores[i] >= threshold;
    if (pred && s.labels[i] == 1) ++tp;
    else if (pred) ++fp;
    else if (s.labels[i] == 1) ++fn;
  }
  const double denom = 2.0 * static_cast<double>(tp) +
                       static_cast<double>(fp) + static_cast<double>(fn);
  return denom == 0.0 ? 0.0 : 2.0 * static_cast<double>(tp) / denom;
}

namespace {

// Candidate thresholds: below all scores, between consecutive distinct
// scores, above all scores.
std::vector<double> threshold_candidates(const ScoredSet& s) {
  std::vector<double> sorted = s.scores;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  std::vector<double> c;
  c.push_back(sorted.front() - 1.0);
  for (std::size_t i = 0; i + 1 < sorted.size(); ++i)
    c.push_back((sorted[i] + sorted[i + 1]) / 2.0);
  c.push_back(sorted.back() + 1.0);
  return c;
}

}  // namespace

std::pair<double, double> best_f1(const ScoredSet& s) {
  validate(s, false);
  double best = -1.0, best_t = 0.0;
  for (double t : threshold_candidates(s)) {
    const double v = f1(s, t);
    if (v > best) {
      best = v;
      best_t = t;
    }
  }
  return {best, best_t};
}

double recall_at_fpr(const ScoredSet& s, double fpr_target) {
  validate(s, true);
  if (!(fpr_target >= 0.0 && fpr_target <= 1.0))
    throw ValidationError("fpr_target must lie in [0,1]");
  double n_pos = 0, n_neg = 0;
  for (int y : s.labels) (y == 1 ? n_pos : n_neg) += 1.0;

  double best = 0.0;
  for (double t : threshold_candidates(s)) {
    double tp = 0, fp = 0;
    for (std::size_t i = 0; i < s.scores.size(); ++i) {
      if (s.scores[i] >= t) {
        if (s.labels[i] == 1) ++tp;
        else ++fp;
      }
    }
    if (fp / n_neg <= fpr_target) best = std::max(best, tp / n_pos);
  }
  return best;
}

MetricReport compute_metrics(const ScoredSet& s) {
  MetricReport r;
  r.auc = roc_auc(s);
  auto [f, t] = best_f1(s);
  r.f1 = f;
  r.f1_threshold = t;
  r.r_at_01 = recall_at_fpr(s, 0.1);
  r.r_at_03 = recall_at_fpr(s, 0.3);
  r.r_at_05 = recall_at_fpr(s, 0.5);
  for (int y : s.labels) (y == 1 ? r.n_pos : r.n_neg) += 1;
  return r;
}

std::string to_json(const MetricReport& report) {
  nlohmann::json j{
      {"auc", report.auc},
      {"f1", report.f1},
      {"f1_threshold", report.f1_threshold},
      {"r_at",
       {{"0.1", report.r_at_01}, {"0.3", report.r_at_03}, {"0.5", report.r_at_05}}},
      {"n_pos", report.n_pos},
      {"n_neg", report.n_neg},
  };
  return j.dump(2);
}

}  // namespace roiattn
