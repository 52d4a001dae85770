#include "hcft/train_eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <limits>
#include <map>
#include <random>
#include <tuple>

#include "hcft/error.hpp"
#include "hcft/ops.hpp"
#include "hcft/threading.hpp"

namespace hcft {

namespace {

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// (B, C, L) batch tensor for the listed epochs, copied sample-for-sample.
Tensor64 batch_tensor(const EpochDataset& data, const std::size_t* idx, std::size_t n) {
  const std::size_t stride = data.epoch_stride();
  std::vector<double> vals(n * stride);
  for (std::size_t i = 0; i < n; ++i) {
    std::memcpy(vals.data() + i * stride, data.epoch_ptr(idx[i]), stride * sizeof(double));
  }
  return Tensor64::create({n, data.channels, data.epoch_len}, std::move(vals));
}

void check_geometry(const Hcft& model, const EpochDataset& data) {
  const ModelConfig& mc = model.config();
  if (data.channels != mc.in_channels || data.epoch_len != mc.in_length) {
    raise(Err::GeometryMismatch,
          "dataset epochs are " + std::to_string(data.channels) + "x" +
              std::to_string(data.epoch_len) + " but the model expects " +
              std::to_string(mc.in_channels) + "x" + std::to_string(mc.in_length));
  }
}

int checked_label(const EpochDataset& data, std::size_t e, std::size_t k) {
  const int y = data.index[e].label;
  if (y < 0 || std::size_t(y) >= k) {
    raise(Err::LabelOutOfRange, "epoch " + std::to_string(e) + " carries label " +
                                    std::to_string(y) + ", outside [0, " +
                                    std::to_string(k) + ")");
  }
  return y;
}

// Temporarily drops requires_grad on the trainables so eval-mode forwards
// record no tape.
class TapeOff {
public:
  explicit TapeOff(Hcft& model) {
    for (auto& [name, t] : model.named_tensors()) {
      if (t.requires_grad()) {
        t.set_requires_grad(false);
        off_.push_back(t);
      }
    }
  }
  ~TapeOff() {
    for (auto& t : off_) t.set_requires_grad(true);
  }
  TapeOff(const TapeOff&) = delete;
  TapeOff& operator=(const TapeOff&) = delete;

private:
  std::vector<Tensor64> off_;
};

// Eval-mode logits for the whole dataset, row-major (size() x n_classes).
std::vector<double> all_logits(Hcft& model, const EpochDataset& data, std::size_t batch) {
  check_geometry(model, data);
  if (batch == 0) raise(Err::BadConfig, "batch size must be at least 1");
  TapeOff guard(model);
  const std::size_t k = model.config().n_classes;
  std::vector<double> out(data.size() * k);
  std::vector<std::size_t> idx(data.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  for (std::size_t at = 0; at < data.size(); at += batch) {
    const std::size_t n = std::min(batch, data.size() - at);
    Tensor64 logits = model.forward_eval(batch_tensor(data, idx.data() + at, n));
    std::memcpy(out.data() + at * k, logits.values().data(), n * k * sizeof(double));
  }
  return out;
}

double softmax_positive(const double* row, std::size_t k) {
  const double m = std::max(row[0], row[1]);
  const double e0 = std::exp(row[0] - m);
  const double e1 = std::exp(row[1] - m);
  (void)k;
  return e1 / (e0 + e1);
}

} // namespace

void TrainConfig::validate() const {
  if (max_epochs < 1) raise(Err::BadConfig, "max_epochs must be at least 1");
  if (batch < 1) raise(Err::BadConfig, "batch size must be at least 1");
  if (t_max < 1) raise(Err::BadConfig, "cosine cycle length must be at least 1");
  if (patience < 1) raise(Err::BadConfig, "patience must be at least 1");
  if (!(lr > 0) || !std::isfinite(lr)) raise(Err::BadConfig, "learning rate must be positive");
  if (lr_min < 0 || lr_min > lr) raise(Err::BadConfig, "lr_min must lie in [0, lr]");
  if (weight_decay < 0) raise(Err::BadConfig, "weight decay must be non-negative");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) {
    raise(Err::BadConfig, "betas must lie in [0, 1)");
  }
  if (!(eps > 0)) raise(Err::BadConfig, "eps must be positive");
  if (!(val_fraction > 0) || !(val_fraction < 1)) {
    raise(Err::BadConfig, "val_fraction must lie in (0, 1)");
  }
}

Tensor64 cross_entropy(const Tensor64& logits, const std::vector<int>& labels,
                       const std::vector<double>& class_weight) {
  if (!logits.defined() || logits.rank() != 2) {
    raise(Err::ShapeMismatch, "cross entropy expects (B, K) logits");
  }
  const std::size_t b = logits.dim(0);
  const std::size_t k = logits.dim(1);
  if (labels.size() != b) {
    raise(Err::ShapeMismatch, "got " + std::to_string(labels.size()) + " labels for " +
                                  std::to_string(b) + " logit rows");
  }
  if (!class_weight.empty() && class_weight.size() != k) {
    raise(Err::ShapeMismatch, "got " + std::to_string(class_weight.size()) +
                                  " class weights for " + std::to_string(k) + " classes");
  }
  for (int y : labels) {
    if (y < 0 || std::size_t(y) >= k) {
      raise(Err::LabelOutOfRange,
            "label " + std::to_string(y) + " outside [0, " + std::to_string(k) + ")");
    }
  }

  const auto& x = logits.values();
  std::vector<double> w(b, 1.0);
  if (!class_weight.empty()) {
    for (std::size_t i = 0; i < b; ++i) w[i] = class_weight[std::size_t(labels[i])];
  }
  double sum_w = 0;
  for (double wi : w) sum_w += wi;
  if (!(sum_w > 0)) raise(Err::BadConfig, "class weights of the batch sum to zero");

  double loss = 0;
  for (std::size_t i = 0; i < b; ++i) {
    const double* row = x.data() + i * k;
    double m = row[0];
    for (std::size_t j = 1; j < k; ++j) m = std::max(m, row[j]);
    double acc = 0;
    for (std::size_t j = 0; j < k; ++j) acc += std::exp(row[j] - m);
    const double lse = m + std::log(acc);
    loss += w[i] * (lse - row[std::size_t(labels[i])]);
  }
  loss /= sum_w;

  std::vector<int> ylab = labels;
  return detail::make_op<double>(
      {1}, {loss}, {logits.node()},
      [b, k, ylab = std::move(ylab), w = std::move(w), sum_w](detail::Node<double>& n) {
        auto& in = *n.inputs[0];
        if (!in.requires_grad) return;
        in.ensure_grad();
        const double g = n.grad[0];
        for (std::size_t i = 0; i < b; ++i) {
          const double* row = in.value.data() + i * k;
          double* grow = in.grad.data() + i * k;
          double m = row[0];
          for (std::size_t j = 1; j < k; ++j) m = std::max(m, row[j]);
          double acc = 0;
          for (std::size_t j = 0; j < k; ++j) acc += std::exp(row[j] - m);
          const double c = g * w[i] / sum_w;
          for (std::size_t j = 0; j < k; ++j) {
            const double p = std::exp(row[j] - m) / acc;
            grow[j] += c * (p - (std::size_t(ylab[i]) == j ? 1.0 : 0.0));
          }
        }
      });
}

double cosine_lr(std::size_t t, std::size_t t_max, double lr0, double lr_min) {
  if (t_max == 0) raise(Err::BadConfig, "cosine cycle length must be at least 1");
  const double phase = double(t % t_max) / double(t_max);
  const double pi = 3.14159265358979323846;
  return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + std::cos(pi * phase));
}

AdamW::AdamW(std::vector<Tensor64> params, double weight_decay, double beta1, double beta2,
             double eps)
    : params_(std::move(params)), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void AdamW::step(double lr) {
  ++step_;
  const double bc1 = 1.0 - std::pow(b1_, double(step_));
  const double bc2 = 1.0 - std::pow(b2_, double(step_));
  const double decay = 1.0 - lr * wd_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& g = params_[i].grad();
    auto& p = params_[i].values_mut();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      p[j] *= decay;
      m[j] = b1_ * m[j] + (1.0 - b1_) * g[j];
      v[j] = b2_ * v[j] + (1.0 - b2_) * g[j] * g[j];
      p[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps_);
    }
  }
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_split(
    const EpochDataset& data, double fraction, std::uint64_t seed) {
  if (!(fraction > 0) || !(fraction < 1)) {
    raise(Err::BadConfig, "split fraction must lie in (0, 1)");
  }
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t e = 0; e < data.size(); ++e) {
    const int y = data.index[e].label;
    if (y < 0) {
      raise(Err::LabelOutOfRange, "epoch " + std::to_string(e) + " is unlabeled");
    }
    groups[y].push_back(e);
  }
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> rest, carve;
  for (auto& [label, idx] : groups) {
    if (idx.size() < 2) {
      raise(Err::ClassTooSmall, "class " + std::to_string(label) + " has only " +
                                    std::to_string(idx.size()) +
                                    " epoch(s); cannot populate both split parts");
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    std::size_t take = std::size_t(std::llround(fraction * double(idx.size())));
    take = std::clamp<std::size_t>(take, 1, idx.size() - 1);
    carve.insert(carve.end(), idx.begin(), idx.begin() + std::ptrdiff_t(take));
    rest.insert(rest.end(), idx.begin() + std::ptrdiff_t(take), idx.end());
  }
  return {std::move(rest), std::move(carve)};
}

EpochDataset select_epochs(const EpochDataset& data, const std::vector<std::size_t>& idx) {
  EpochDataset out;
  out.channels = data.channels;
  out.epoch_len = data.epoch_len;
  out.fs = data.fs;
  out.window_s = data.window_s;
  out.channel_labels = data.channel_labels;
  out.subjects = data.subjects;
  out.recordings = data.recordings;
  out.index.reserve(idx.size());
  out.data.reserve(idx.size() * data.epoch_stride());
  for (std::size_t e : idx) {
    out.index.push_back(data.index[e]);
    const double* src = data.epoch_ptr(e);
    out.data.insert(out.data.end(), src, src + data.epoch_stride());
  }
  return out;
}

std::string TrainResult::history_csv() const {
  std::string csv = "epoch,lr,train_loss,val_metric\n";
  for (const auto& row : history) {
    csv += std::to_string(row.epoch) + "," + fmt_g(row.lr) + "," + fmt_g(row.train_loss) +
           "," + fmt_g(row.val_metric) + "\n";
  }
  return csv;
}

namespace {

double monitor_value(Hcft& model, const EpochDataset& val, const TrainConfig& tc) {
  if (tc.monitor == Monitor::Auc) {
    std::vector<double> scores = predict_scores(model, val, tc.batch);
    std::vector<int> labels(val.size());
    for (std::size_t e = 0; e < val.size(); ++e) labels[e] = val.index[e].label;
    return roc_auc(scores, labels);
  }
  const std::vector<int> preds = predict_labels(model, val, tc.batch);
  std::size_t hit = 0;
  for (std::size_t e = 0; e < val.size(); ++e) {
    if (preds[e] == val.index[e].label) ++hit;
  }
  return double(hit) / double(val.size());
}

} // namespace

TrainResult train(Hcft& model, const EpochDataset& data, const TrainConfig& tc) {
  tc.validate();
  retain_large_allocations();
  check_geometry(model, data);
  const std::size_t k = model.config().n_classes;
  if (tc.monitor == Monitor::Auc && k != 2) {
    raise(Err::BadConfig, "AUC monitoring needs a binary task");
  }
  for (std::size_t e = 0; e < data.size(); ++e) checked_label(data, e, k);

  auto [train_idx, val_idx] = stratified_split(data, tc.val_fraction, tc.seed);
  const EpochDataset val = select_epochs(data, val_idx);

  std::vector<double> class_weight;
  if (tc.class_weights) {
    std::vector<std::size_t> count(k, 0);
    for (std::size_t e : train_idx) ++count[std::size_t(data.index[e].label)];
    class_weight.assign(k, 0.0);
    for (std::size_t c = 0; c < k; ++c) {
      if (count[c] > 0) {
        class_weight[c] = double(train_idx.size()) / (double(k) * double(count[c]));
      }
    }
  }

  NamedTensors<double> named = model.named_tensors();
  std::vector<Tensor64> params;
  for (auto& [name, t] : named) {
    if (t.requires_grad()) params.push_back(t);
  }
  AdamW opt(params, tc.weight_decay, tc.beta1, tc.beta2, tc.eps);

  std::mt19937_64 order_rng(tc.seed ^ 0x9e3779b97f4a7c15ull);
  std::mt19937_64 dropout_rng(tc.seed ^ 0xda3e39cb94b95bdbull);

  TrainResult result;
  double best = -std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> best_state;
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= tc.max_epochs; ++epoch) {
    const double lr_e = cosine_lr(epoch - 1, tc.t_max, tc.lr, tc.lr_min);
    std::shuffle(train_idx.begin(), train_idx.end(), order_rng);

    double loss_sum = 0;
    for (std::size_t at = 0; at < train_idx.size(); at += tc.batch) {
      const std::size_t n = std::min(tc.batch, train_idx.size() - at);
      Tensor64 x = batch_tensor(data, train_idx.data() + at, n);
      std::vector<int> y(n);
      for (std::size_t i = 0; i < n; ++i) y[i] = data.index[train_idx[at + i]].label;

      for (auto& p : params) p.zero_grad();
      FwdCtx<double> ctx;
      ctx.mode = Mode::Train;
      ctx.rng = &dropout_rng;
      Tensor64 loss = cross_entropy(model.forward(x, ctx), y, class_weight);
      const double lv = loss.values()[0];
      if (!std::isfinite(lv)) {
        raise(Err::NonFinite, "training loss diverged at epoch " + std::to_string(epoch));
      }
      backward(loss);
      opt.step(lr_e);
      loss_sum += lv * double(n);
    }

    const double metric = monitor_value(model, val, tc);
    result.history.push_back(
        {epoch, lr_e, loss_sum / double(train_idx.size()), metric});

    if (metric > best || best_state.empty()) {
      best = metric;
      result.best_epoch = epoch;
      best_state.clear();
      for (auto& [name, t] : named) best_state.push_back(t.values());
      since_best = 0;
    } else {
      ++since_best;
    }
    if (metric >= tc.target_metric || since_best >= tc.patience) break;
  }

  for (std::size_t i = 0; i < named.size(); ++i) {
    named[i].second.values_mut() = best_state[i];
  }
  result.best_metric = best;
  result.stopped_early = result.history.size() < tc.max_epochs;
  return result;
}

std::vector<int> predict_labels(Hcft& model, const EpochDataset& data, std::size_t batch) {
  const std::size_t k = model.config().n_classes;
  const std::vector<double> logits = all_logits(model, data, batch);
  std::vector<int> preds(data.size());
  for (std::size_t e = 0; e < data.size(); ++e) {
    const double* row = logits.data() + e * k;
    std::size_t arg = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (row[j] > row[arg]) arg = j;
    }
    preds[e] = int(arg);
  }
  return preds;
}

std::vector<double> predict_scores(Hcft& model, const EpochDataset& data, std::size_t batch) {
  const std::size_t k = model.config().n_classes;
  if (k != 2) raise(Err::BadConfig, "scores are the positive-class probability of a binary task");
  const std::vector<double> logits = all_logits(model, data, batch);
  std::vector<double> scores(data.size());
  for (std::size_t e = 0; e < data.size(); ++e) {
    scores[e] = softmax_positive(logits.data() + e * 2, 2);
  }
  return scores;
}

MetricsReport evaluate(Hcft& model, const EpochDataset& data, std::size_t batch,
                       const std::string& fold_name) {
  const std::size_t k = model.config().n_classes;
  if (data.size() == 0) raise(Err::EmptyMatrix, "cannot evaluate an empty dataset");
  for (std::size_t e = 0; e < data.size(); ++e) checked_label(data, e, k);

  const std::vector<double> logits = all_logits(model, data, batch);
  ConfusionMatrix cm(k);
  std::vector<int> labels(data.size());
  std::vector<double> scores(data.size(), 0.0);
  for (std::size_t e = 0; e < data.size(); ++e) {
    const double* row = logits.data() + e * k;
    std::size_t arg = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (row[j] > row[arg]) arg = j;
    }
    labels[e] = data.index[e].label;
    cm.add(std::size_t(labels[e]), arg);
    if (k == 2) scores[e] = softmax_positive(row, 2);
  }

  MetricValues mv;
  mv.accuracy = accuracy(cm);
  mv.kappa = cohen_kappa(cm);
  if (k == 2) {
    std::size_t pos = 0, neg = 0;
    for (int y : labels) (y == 1 ? pos : neg)++;
    if (pos > 0 && neg > 0) {
      std::tie(mv.sensitivity, mv.specificity) = sens_spec(cm, 1);
      mv.auc = roc_auc(scores, labels);
    } else if (pos > 0) {
      mv.sensitivity = double(cm.at(1, 1)) / double(pos);
    } else {
      mv.specificity = double(cm.at(0, 0)) / double(neg);
    }
    if (neg > 0 && data.window_s > 0) {
      mv.fpr_per_hour = fpr_per_hour(cm.at(0, 1), double(neg) * data.window_s / 3600.0);
    }
  }

  MetricsReport report;
  report.folds.emplace_back(fold_name, mv);
  return report;
}

MetricsReport loso(const ModelConfig& mc, const EpochDataset& data, const TrainConfig& tc) {
  std::vector<std::vector<std::size_t>> by_subject(data.subjects.size());
  for (std::size_t e = 0; e < data.size(); ++e) {
    by_subject.at(data.index[e].subject).push_back(e);
  }
  std::vector<std::size_t> active;
  for (std::size_t s = 0; s < by_subject.size(); ++s) {
    if (!by_subject[s].empty()) active.push_back(s);
  }
  if (active.size() < 2) {
    raise(Err::SingleSubject, "leave-one-subject-out needs at least two subjects with epochs");
  }

  MetricsReport report;
  for (std::size_t fold = 0; fold < active.size(); ++fold) {
    const std::size_t held = active[fold];
    std::vector<std::size_t> train_idx;
    for (std::size_t s : active) {
      if (s == held) continue;
      train_idx.insert(train_idx.end(), by_subject[s].begin(), by_subject[s].end());
    }
    Hcft model(mc, tc.seed + fold);
    train(model, select_epochs(data, train_idx), tc);
    MetricsReport one = evaluate(model, select_epochs(data, by_subject[held]), tc.batch,
                                 data.subjects[held]);
    report.folds.push_back(one.folds[0]);
  }
  return report;
}

} // namespace hcft
