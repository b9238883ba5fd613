#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ecgxai/signal/types.hpp"

namespace ecgxai::harness {

inline constexpr std::size_t kClasses = signal::kNumClasses;

enum class Level { segment, patient };

inline std::string_view level_name(Level l) { return l == Level::segment ? "segment" : "patient"; }

struct ClassMetrics {
  double accuracy = 0, specificity = 0, sensitivity = 0, precision = 0, f1 = 0;
  double auc = std::numeric_limits<double>::quiet_NaN();
  std::size_t support = 0;
};

using Confusion = std::array<std::array<std::size_t, kClasses>, kClasses>;  // [truth][predicted]

struct MetricsReport {
  Level level = Level::segment;
  std::array<ClassMetrics, kClasses> per_class{};
  double overall_accuracy = 0;
  Confusion confusion{};
  std::size_t n = 0;
};

/// Area under the ROC curve via the rank statistic; tied scores count half.
/// NaN when either class is absent.
inline double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> positive) {
  require(scores.size() == positive.size(), "roc_auc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double mid_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k)
      if (positive[order[k]]) {
        rank_sum += mid_rank;
        ++n_pos;
      }
    i = j + 1;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::numeric_limits<double>::quiet_NaN();
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return (rank_sum - np * (np + 1) / 2.0) / (np * nn);
}

inline double safe_ratio(double num, double den) { return den > 0 ? num / den : 0.0; }

/// One-vs-rest metrics from probability rows (N, kClasses). Predictions
/// default to the row argmax; `predicted` overrides them (patient majority vote).
inline MetricsReport compute_metrics(std::span<const double> probs, std::span<const std::size_t> truth, Level level,
                                     std::optional<std::span<const std::size_t>> predicted = std::nullopt) {
  const std::size_t n = truth.size();
  require(probs.size() == n * kClasses, "compute_metrics: expected " + std::to_string(n * kClasses) +
                                            " probabilities, got " + std::to_string(probs.size()));
  if (predicted) require(predicted->size() == n, "compute_metrics: predicted labels differ in length");
  MetricsReport r;
  r.level = level;
  r.n = n;
  std::vector<std::size_t> pred(n);
  for (std::size_t i = 0; i < n; ++i) {
    require(truth[i] < kClasses, "compute_metrics: label out of range");
    const double* row = probs.data() + i * kClasses;
    double row_sum = 0;
    for (std::size_t c = 0; c < kClasses; ++c) row_sum += row[c];
    require(std::abs(row_sum - 1.0) < 1e-4, "compute_metrics: probability row " + std::to_string(i) + " sums to " +
                                                std::to_string(row_sum));
    pred[i] = predicted ? (*predicted)[i] : static_cast<std::size_t>(std::max_element(row, row + kClasses) - row);
    require(pred[i] < kClasses, "compute_metrics: predicted label out of range");
    ++r.confusion[truth[i]][pred[i]];
  }
  std::size_t correct = 0;
  for (std::size_t c = 0; c < kClasses; ++c) correct += r.confusion[c][c];
  r.overall_accuracy = safe_ratio(static_cast<double>(correct), static_cast<double>(n));

  std::vector<double> scores(n);
  std::vector<std::uint8_t> pos(n);
  for (std::size_t c = 0; c < kClasses; ++c) {
    double tp = 0, fp = 0, fn = 0, tn = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool t = truth[i] == c, p = pred[i] == c;
      tp += t && p;
      fp += !t && p;
      fn += t && !p;
      tn += !t && !p;
      scores[i] = probs[i * kClasses + c];
      pos[i] = t;
    }
    auto& m = r.per_class[c];
    m.support = static_cast<std::size_t>(tp + fn);
    m.accuracy = safe_ratio(tp + tn, static_cast<double>(n));
    m.sensitivity = safe_ratio(tp, tp + fn);
    m.specificity = safe_ratio(tn, tn + fp);
    m.precision = safe_ratio(tp, tp + fp);
    m.f1 = safe_ratio(2 * m.precision * m.sensitivity, m.precision + m.sensitivity);
    m.auc = roc_auc(scores, pos);
  }
  return r;
}

/// Pointwise mean of reports. Confusion counts are summed.
inline MetricsReport mean_report(std::span<const MetricsReport> reports) {
  require(!reports.empty(), "mean_report: no reports");
  MetricsReport out;
  out.level = reports.front().level;
  const auto k = static_cast<double>(reports.size());
  for (const auto& r : reports) {
    out.overall_accuracy += r.overall_accuracy / k;
    out.n += r.n;
    for (std::size_t a = 0; a < kClasses; ++a)
      for (std::size_t b = 0; b < kClasses; ++b) out.confusion[a][b] += r.confusion[a][b];
  }
  for (std::size_t c = 0; c < kClasses; ++c) {
    auto& m = out.per_class[c];
    m.auc = 0;
    for (const auto& r : reports) {
      const auto& x = r.per_class[c];
      m.accuracy += x.accuracy / k;
      m.specificity += x.specificity / k;
      m.sensitivity += x.sensitivity / k;
      m.precision += x.precision / k;
      m.f1 += x.f1 / k;
      m.auc += x.auc / k;  // NaN in any iteration propagates
      m.support += x.support;
    }
  }
  return out;
}

struct PatientPrediction {
  std::string patient_id;
  std::size_t truth = 0;
  std::size_t label = 0;
  std::array<double, kClasses> mean_prob{};
  std::size_t n_segments = 0;
};

/// Modal segment label per patient; ties go to the tied label with the
/// highest mean probability. Patients are returned sorted by id.
inline std::vector<PatientPrediction> patient_majority_vote(std::span<const std::string> patient_ids,
                                                            std::span<const double> probs,
                                                            std::span<const std::size_t> truth) {
  require(probs.size() == patient_ids.size() * kClasses && truth.size() == patient_ids.size(),
          "patient_majority_vote: inputs differ in length");
  struct Acc {
    std::array<std::size_t, kClasses> votes{};
    std::array<double, kClasses> prob_sum{};
    std::size_t n = 0, truth = 0;
  };
  std::map<std::string, Acc> by_patient;
  for (std::size_t i = 0; i < patient_ids.size(); ++i) {
    auto& a = by_patient[patient_ids[i]];
    const double* row = probs.data() + i * kClasses;
    ++a.votes[static_cast<std::size_t>(std::max_element(row, row + kClasses) - row)];
    for (std::size_t c = 0; c < kClasses; ++c) a.prob_sum[c] += row[c];
    if (a.n > 0 && a.truth != truth[i])
      throw InvalidInputError("patient_majority_vote: patient " + patient_ids[i] + " carries more than one label");
    a.truth = truth[i];
    ++a.n;
  }
  std::vector<PatientPrediction> out;
  out.reserve(by_patient.size());
  for (const auto& [id, a] : by_patient) {
    PatientPrediction p;
    p.patient_id = id;
    p.truth = a.truth;
    p.n_segments = a.n;
    for (std::size_t c = 0; c < kClasses; ++c) p.mean_prob[c] = a.prob_sum[c] / static_cast<double>(a.n);
    const std::size_t top = *std::max_element(a.votes.begin(), a.votes.end());
    bool have = false;
    for (std::size_t c = 0; c < kClasses; ++c) {
      if (a.votes[c] != top) continue;
      if (!have || p.mean_prob[c] > p.mean_prob[p.label]) p.label = c;
      have = true;
    }
    out.push_back(p);
  }
  return out;
}

/// Patient-level report: majority-vote labels, mean probabilities for AUC.
inline MetricsReport patient_metrics(std::span<const PatientPrediction> patients) {
  std::vector<double> probs;
  std::vector<std::size_t> truth, pred;
  for (const auto& p : patients) {
    probs.insert(probs.end(), p.mean_prob.begin(), p.mean_prob.end());
    truth.push_back(p.truth);
    pred.push_back(p.label);
  }
  return compute_metrics(probs, truth, Level::patient, std::span<const std::size_t>(pred));
}

}  // namespace ecgxai::harness
