#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "hcft/dataset.hpp"
#include "hcft/metrics.hpp"
#include "hcft/model.hpp"

namespace hcft {

// What the early-stopping logic watches on the validation carve.
enum class Monitor { Accuracy, Auc };

struct TrainConfig {
  std::size_t max_epochs = 250;
  std::size_t batch = 64;
  std::size_t t_max = 32;    // cosine-annealing cycle length, in epochs
  std::size_t patience = 25; // epochs without improvement before stopping
  Monitor monitor = Monitor::Accuracy;
  double lr = 0.001;
  double lr_min = 0.0;
  double weight_decay = 0.00125;
  double beta1 = 0.675;
  double beta2 = 0.999;
  double eps = 1e-8;
  double val_fraction = 0.1; // stratified validation carve from the train set
  double target_metric = 2.0; // stop once the monitor reaches this; 2 = never
  bool class_weights = false; // inverse-frequency weights in the loss
  std::uint64_t seed = 0;

  void validate() const; // BadConfig on out-of-range fields
  bool operator==(const TrainConfig&) const = default;
};

// Mean negative log-softmax of the labeled logits over the batch, stable via
// max subtraction. A non-empty class_weight (one entry per class) switches to
// the weighted mean: sum(w[y_i] * nll_i) / sum(w[y_i]).
// LabelOutOfRange when a label falls outside [0, K); ShapeMismatch when the
// label count or weight count disagrees with the logits.
Tensor64 cross_entropy(const Tensor64& logits, const std::vector<int>& labels,
                       const std::vector<double>& class_weight = {});

// lr_min + (lr0 - lr_min) * (1 + cos(pi * (t mod t_max) / t_max)) / 2:
// annealing with a hard restart every t_max epochs. BadConfig when t_max = 0.
double cosine_lr(std::size_t t, std::size_t t_max, double lr0, double lr_min = 0.0);

// Adam with decoupled weight decay: each step first shrinks the parameter by
// (1 - lr * weight_decay), then applies the bias-corrected moment update.
// The update sequence is deterministic.
class AdamW {
public:
  AdamW() = default;
  AdamW(std::vector<Tensor64> params, double weight_decay, double beta1, double beta2,
        double eps);

  // One update over every parameter from its populated gradient.
  // ShapeMismatch when a gradient is missing.
  void step(double lr);
  std::size_t steps() const { return step_; }

private:
  std::vector<Tensor64> params_;
  std::vector<std::vector<double>> m_, v_;
  double wd_ = 0, b1_ = 0, b2_ = 0, eps_ = 0;
  std::size_t step_ = 0;
};

// Deterministic stratified index split: each class contributes a
// round(fraction * count) slice (at least one epoch) to the carve, the rest
// stays in the first part. Order within each part follows the shuffle.
// LabelOutOfRange on unlabeled epochs; ClassTooSmall when a class cannot
// populate both parts.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_split(
    const EpochDataset& data, double fraction, std::uint64_t seed);

// The listed epochs of `data`, in the given order, as their own dataset.
EpochDataset select_epochs(const EpochDataset& data, const std::vector<std::size_t>& idx);

struct EpochLog {
  std::size_t epoch = 0; // 1-based
  double lr = 0;
  double train_loss = 0;
  double val_metric = 0;
};

struct TrainResult {
  std::vector<EpochLog> history;
  std::size_t best_epoch = 0; // 1-based epoch whose weights the model keeps
  double best_metric = 0;
  bool stopped_early = false; // finished before max_epochs

  std::string history_csv() const; // "epoch,lr,train_loss,val_metric" rows
};

// Full training loop: stratified validation carve, deterministic batch
// shuffling per seed, cosine-annealed AdamW, per-epoch validation of the
// monitored metric, early stopping on patience, and best-weights restoration
// (parameters and running statistics) before returning.
TrainResult train(Hcft& model, const EpochDataset& data, const TrainConfig& tc);

// Eval-mode pass over a labeled dataset: per-class confusion, accuracy,
// kappa; binary tasks additionally get sensitivity/specificity, AUC from the
// positive-class probability, and false alarms per negative-class hour.
// The report carries a single fold under `fold_name`.
MetricsReport evaluate(Hcft& model, const EpochDataset& data, std::size_t batch = 64,
                       const std::string& fold_name = "all");

// Positive-class probability (binary) per epoch, eval mode.
std::vector<double> predict_scores(Hcft& model, const EpochDataset& data,
                                   std::size_t batch = 64);
// Argmax class per epoch, eval mode.
std::vector<int> predict_labels(Hcft& model, const EpochDataset& data,
                                std::size_t batch = 64);

// Leave-one-subject-out: one freshly seeded model per held-out subject,
// trained on the remaining subjects and scored on the held-out one. Folds are
// named by subject; the report's mean/spread aggregate them.
// SingleSubject when the dataset has fewer than two subjects.
MetricsReport loso(const ModelConfig& mc, const EpochDataset& data, const TrainConfig& tc);

} // namespace hcft
