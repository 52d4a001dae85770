#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace hcft {

// K x K counts, rows indexed by true class, columns by predicted class.
struct ConfusionMatrix {
  std::size_t k = 0;
  std::vector<std::uint64_t> counts;

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::size_t classes) : k(classes), counts(classes * classes, 0) {}
  void add(std::size_t truth, std::size_t pred, std::uint64_t n = 1);
  std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts[truth * k + pred]; }
  std::uint64_t total() const;
};

// trace / total
double accuracy(const ConfusionMatrix& cm);

// (p_o - p_e) / (1 - p_e); 0 by convention when chance agreement is 1
double cohen_kappa(const ConfusionMatrix& cm);

// (TP/(TP+FN), TN/(TN+FP)) of a binary matrix
std::pair<double, double> sens_spec(const ConfusionMatrix& cm, std::size_t positive_class);

// false alarms per hour of negative-class recording
double fpr_per_hour(std::size_t false_positive_epochs, double interictal_hours);

// Alarm count after k-of-n smoothing: epoch t alarms when at least k of the
// n most recent epoch predictions (inclusive) are positive. k = n = 1
// reproduces the plain per-epoch count.
std::size_t count_alarms(const std::vector<int>& preds, std::size_t k, std::size_t n);

// Probability a positive outranks a negative, ties at half credit
// (Mann-Whitney; equals trapezoidal area under the empirical ROC).
double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

struct MetricValues {
  double accuracy = 0, kappa = 0, sensitivity = 0, specificity = 0, fpr_per_hour = 0,
         auc = 0;
};

// One evaluation run: per-fold values plus their mean and spread.
struct MetricsReport {
  std::vector<std::pair<std::string, MetricValues>> folds;

  MetricValues mean() const;
  MetricValues spread() const; // population standard deviation across folds
  std::string to_kv() const;
  std::string to_json() const;
};

} // namespace hcft
