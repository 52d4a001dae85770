#include "hcft/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "hcft/error.hpp"

namespace hcft {

void ConfusionMatrix::add(std::size_t truth, std::size_t pred, std::uint64_t n) {
  if (truth >= k || pred >= k) {
    raise(Err::LabelOutOfRange, "class " + std::to_string(std::max(truth, pred)) +
                                    " in a " + std::to_string(k) + "-class matrix");
  }
  counts[truth * k + pred] += n;
}

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
}

double accuracy(const ConfusionMatrix& cm) {
  const std::uint64_t n = cm.total();
  if (n == 0) raise(Err::EmptyMatrix, "accuracy of an empty confusion matrix");
  std::uint64_t trace = 0;
  for (std::size_t i = 0; i < cm.k; ++i) trace += cm.at(i, i);
  return double(trace) / double(n);
}

double cohen_kappa(const ConfusionMatrix& cm) {
  const std::uint64_t n = cm.total();
  if (n == 0) raise(Err::EmptyMatrix, "kappa of an empty confusion matrix");
  double po = 0, pe = 0;
  for (std::size_t i = 0; i < cm.k; ++i) {
    po += double(cm.at(i, i));
    std::uint64_t row = 0, col = 0;
    for (std::size_t j = 0; j < cm.k; ++j) {
      row += cm.at(i, j);
      col += cm.at(j, i);
    }
    pe += double(row) * double(col);
  }
  po /= double(n);
  pe /= double(n) * double(n);
  if (pe >= 1.0) return 0.0;
  return (po - pe) / (1.0 - pe);
}

std::pair<double, double> sens_spec(const ConfusionMatrix& cm, std::size_t positive_class) {
  if (cm.k != 2 || positive_class > 1) {
    raise(Err::ShapeMismatch, "sensitivity/specificity need a binary matrix");
  }
  const std::size_t pos = positive_class, neg = 1 - positive_class;
  const std::uint64_t tp = cm.at(pos, pos), fn = cm.at(pos, neg);
  const std::uint64_t tn = cm.at(neg, neg), fp = cm.at(neg, pos);
  if (tp + fn == 0) raise(Err::NoPositives, "no positive samples");
  if (tn + fp == 0) raise(Err::NoNegatives, "no negative samples");
  return {double(tp) / double(tp + fn), double(tn) / double(tn + fp)};
}

double fpr_per_hour(std::size_t false_positive_epochs, double interictal_hours) {
  if (!(interictal_hours > 0)) {
    raise(Err::ZeroDuration, "false-positive rate over a non-positive duration");
  }
  return double(false_positive_epochs) / interictal_hours;
}

std::size_t count_alarms(const std::vector<int>& preds, std::size_t k, std::size_t n) {
  if (k == 0 || n == 0 || k > n) {
    raise(Err::BadConfig, "alarm smoothing needs 1 <= k <= n");
  }
  std::size_t alarms = 0;
  for (std::size_t t = 0; t < preds.size(); ++t) {
    std::size_t hits = 0;
    const std::size_t lo = t + 1 >= n ? t + 1 - n : 0;
    for (std::size_t u = lo; u <= t; ++u) hits += preds[u] != 0 ? 1 : 0;
    if (hits >= k) ++alarms;
  }
  return alarms;
}

double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) {
    raise(Err::ShapeMismatch, "scores and labels differ in length");
  }
  std::size_t npos = 0, nneg = 0;
  for (int l : labels) {
    if (l == 1) {
      ++npos;
    } else if (l == 0) {
      ++nneg;
    } else {
      raise(Err::LabelOutOfRange, "AUC labels must be 0 or 1");
    }
  }
  if (npos == 0 || nneg == 0) raise(Err::OneClassOnly, "AUC needs both classes");

  // midranks: tied scores share the average of the ranks they span
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum_pos = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * double(i + j) + 1.0; // 1-based
    for (std::size_t t = i; t <= j; ++t) {
      if (labels[order[t]] == 1) rank_sum_pos += midrank;
    }
    i = j + 1;
  }
  const double u = rank_sum_pos - 0.5 * double(npos) * double(npos + 1);
  return u / (double(npos) * double(nneg));
}

MetricValues MetricsReport::mean() const {
  MetricValues m;
  if (folds.empty()) return m;
  for (const auto& [name, v] : folds) {
    m.accuracy += v.accuracy;
    m.kappa += v.kappa;
    m.sensitivity += v.sensitivity;
    m.specificity += v.specificity;
    m.fpr_per_hour += v.fpr_per_hour;
    m.auc += v.auc;
  }
  const double n = double(folds.size());
  m.accuracy /= n;
  m.kappa /= n;
  m.sensitivity /= n;
  m.specificity /= n;
  m.fpr_per_hour /= n;
  m.auc /= n;
  return m;
}

MetricValues MetricsReport::spread() const {
  MetricValues s;
  if (folds.size() < 2) return s;
  const MetricValues m = mean();
  for (const auto& [name, v] : folds) {
    s.accuracy += (v.accuracy - m.accuracy) * (v.accuracy - m.accuracy);
    s.kappa += (v.kappa - m.kappa) * (v.kappa - m.kappa);
    s.sensitivity += (v.sensitivity - m.sensitivity) * (v.sensitivity - m.sensitivity);
    s.specificity += (v.specificity - m.specificity) * (v.specificity - m.specificity);
    s.fpr_per_hour += (v.fpr_per_hour - m.fpr_per_hour) * (v.fpr_per_hour - m.fpr_per_hour);
    s.auc += (v.auc - m.auc) * (v.auc - m.auc);
  }
  const double n = double(folds.size());
  s.accuracy = std::sqrt(s.accuracy / n);
  s.kappa = std::sqrt(s.kappa / n);
  s.sensitivity = std::sqrt(s.sensitivity / n);
  s.specificity = std::sqrt(s.specificity / n);
  s.fpr_per_hour = std::sqrt(s.fpr_per_hour / n);
  s.auc = std::sqrt(s.auc / n);
  return s;
}

namespace {

void append_kv(std::ostringstream& out, const std::string& prefix, const MetricValues& v) {
  out << prefix << ".accuracy=" << v.accuracy << "\n";
  out << prefix << ".kappa=" << v.kappa << "\n";
  out << prefix << ".sensitivity=" << v.sensitivity << "\n";
  out << prefix << ".specificity=" << v.specificity << "\n";
  out << prefix << ".fpr_per_hour=" << v.fpr_per_hour << "\n";
  out << prefix << ".auc=" << v.auc << "\n";
}

nlohmann::json to_json_obj(const MetricValues& v) {
  return {{"accuracy", v.accuracy},       {"kappa", v.kappa},
          {"sensitivity", v.sensitivity}, {"specificity", v.specificity},
          {"fpr_per_hour", v.fpr_per_hour}, {"auc", v.auc}};
}

} // namespace

std::string MetricsReport::to_kv() const {
  std::ostringstream out;
  out.precision(10);
  out << "folds=" << folds.size() << "\n";
  for (std::size_t i = 0; i < folds.size(); ++i) {
    out << "fold." << i << ".name=" << folds[i].first << "\n";
    append_kv(out, "fold." + std::to_string(i), folds[i].second);
  }
  append_kv(out, "mean", mean());
  append_kv(out, "std", spread());
  return out.str();
}

std::string MetricsReport::to_json() const {
  nlohmann::json j;
  j["folds"] = nlohmann::json::array();
  for (const auto& [name, v] : folds) {
    nlohmann::json f = to_json_obj(v);
    f["name"] = name;
    j["folds"].push_back(f);
  }
  j["mean"] = to_json_obj(mean());
  j["std"] = to_json_obj(spread());
  return j.dump(2);
}

} // namespace hcft
