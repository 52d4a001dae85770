#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <hcft/error.hpp>
#include <hcft/ops.hpp>
#include <hcft/synthgen.hpp>
#include <hcft/train_eval.hpp>

#include "test_support.hpp"

using namespace hcft;

namespace {

template <typename F>
Err error_code(F&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  REQUIRE(false);
  return Err::BadConfig;
}

ModelConfig mini_config() {
  ModelConfig mc;
  mc.in_channels = 2;
  mc.in_length = 64;
  mc.embed_dim = 8;
  mc.n_heads = 2;
  mc.stage_depths = {1, 1, 1, 1};
  return mc;
}

SynthSpec mini_spec(std::size_t n_per_class, std::uint64_t seed) {
  SynthSpec spec;
  spec.n_per_class = n_per_class;
  spec.channels = 2;
  spec.fs = 32.0;
  spec.window_s = 2.0; // 64 samples
  spec.snr = 3.0;
  spec.seed = seed;
  return spec;
}

double hand_nll(const std::vector<double>& row, std::size_t label) {
  double m = row[0];
  for (double v : row) m = std::max(m, v);
  double acc = 0;
  for (double v : row) acc += std::exp(v - m);
  return m + std::log(acc) - row[label];
}

} // namespace

TEST_CASE("cross entropy matches closed forms") {
  Tensor64 uniform = Tensor64::create({1, 2}, {0.0, 0.0});
  CHECK(cross_entropy(uniform, {0}).values()[0] == doctest::Approx(std::log(2.0)).epsilon(1e-15));

  Tensor64 pair = Tensor64::create({1, 2}, {1.0, 2.0});
  CHECK(cross_entropy(pair, {0}).values()[0] ==
        doctest::Approx(std::log(1.0 + std::exp(1.0))).epsilon(1e-12));

  // A huge margin on the correct class drives the loss to zero.
  Tensor64 margin = Tensor64::create({1, 2}, {25.0, 0.0});
  CHECK(cross_entropy(margin, {0}).values()[0] < 1e-8);
  CHECK(cross_entropy(margin, {0}).values()[0] >= 0.0);
}

TEST_CASE("cross entropy averages the batch and honors class weights") {
  Tensor64 logits = Tensor64::create({2, 3}, {0.3, -1.2, 0.8, 2.0, 0.1, -0.4});
  const double nll0 = hand_nll({0.3, -1.2, 0.8}, 2);
  const double nll1 = hand_nll({2.0, 0.1, -0.4}, 0);
  CHECK(cross_entropy(logits, {2, 0}).values()[0] ==
        doctest::Approx(0.5 * (nll0 + nll1)).epsilon(1e-12));

  const std::vector<double> w{3.0, 1.0, 2.0};
  CHECK(cross_entropy(logits, {2, 0}, w).values()[0] ==
        doctest::Approx((2.0 * nll0 + 3.0 * nll1) / 5.0).epsilon(1e-12));
}

TEST_CASE("cross entropy rejects bad labels and shapes") {
  Tensor64 logits = Tensor64::create({2, 2}, {0.0, 1.0, 1.0, 0.0});
  CHECK(error_code([&] { cross_entropy(logits, {0, 2}); }) == Err::LabelOutOfRange);
  CHECK(error_code([&] { cross_entropy(logits, {0, -1}); }) == Err::LabelOutOfRange);
  CHECK(error_code([&] { cross_entropy(logits, {0}); }) == Err::ShapeMismatch);
  CHECK(error_code([&] { cross_entropy(logits, {0, 1}, {1.0, 2.0, 3.0}); }) ==
        Err::ShapeMismatch);
  Tensor64 flat = Tensor64::create({4}, {0.0, 1.0, 1.0, 0.0});
  CHECK(error_code([&] { cross_entropy(flat, {0, 1}); }) == Err::ShapeMismatch);
  CHECK(error_code([&] { cross_entropy(logits, {0, 1}, {0.0, 0.0}); }) == Err::BadConfig);
}

TEST_CASE("cross entropy gradient matches finite differences") {
  std::mt19937_64 rng(414);
  for (int round = 0; round < 6; ++round) {
    const std::size_t b = 1 + rng() % 4;
    const std::size_t k = 2 + rng() % 3;
    Tensor64 logits = Tensor64::uniform({b, k}, -2.0, 2.0, rng);
    std::vector<int> labels(b);
    for (auto& y : labels) y = int(rng() % k);
    std::vector<double> weights;
    if (round % 2 == 1) {
      weights.resize(k);
      for (auto& w : weights) w = 0.5 + double(rng() % 8) / 4.0;
    }
    auto f = [&](const std::vector<Tensor64>& in) {
      return cross_entropy(in[0], labels, weights);
    };
    CHECK(testutil::max_grad_gap(f, {logits}) < 1e-9);
  }
}

TEST_CASE("cosine schedule hits its anchor points and restarts") {
  CHECK(cosine_lr(0, 32, 0.001) == 0.001);
  CHECK(cosine_lr(16, 32, 0.001) == doctest::Approx(0.0005).epsilon(1e-12));
  CHECK(cosine_lr(8, 16, 0.004, 0.002) == doctest::Approx(0.003).epsilon(1e-12));
  CHECK(cosine_lr(32, 32, 0.001) == 0.001);  // hard restart
  CHECK(cosine_lr(48, 32, 0.001) == doctest::Approx(0.0005).epsilon(1e-12));

  // Strictly decreasing within one cycle, bounded by [lr_min, lr0].
  double prev = cosine_lr(0, 32, 0.001, 1e-5);
  for (std::size_t t = 1; t < 32; ++t) {
    const double lr = cosine_lr(t, 32, 0.001, 1e-5);
    CHECK(lr < prev);
    CHECK(lr >= 1e-5);
    CHECK(lr <= 0.001);
    prev = lr;
  }
  CHECK(error_code([&] { cosine_lr(3, 0, 0.001); }) == Err::BadConfig);
}

TEST_CASE("optimizer with zero gradient applies exactly the decay factor") {
  Tensor64 p = Tensor64::create({3}, {0.5, -2.0, 1.25});
  p.set_requires_grad(true);
  p.zero_grad();
  AdamW opt({p}, 0.00125, 0.675, 0.999, 1e-8);
  opt.step(0.001);
  const double factor = 1.0 - 0.001 * 0.00125;
  CHECK(p.values()[0] == 0.5 * factor);
  CHECK(p.values()[1] == -2.0 * factor);
  CHECK(p.values()[2] == 1.25 * factor);
  CHECK(opt.steps() == 1);
}

TEST_CASE("optimizer first step with unit gradient moves by one bias-corrected lr") {
  Tensor64 p = Tensor64::create({1}, {0.25});
  p.set_requires_grad(true);
  // Record grad = 1 through the tape.
  Tensor64 loss = sum(mul(p, Tensor64::create({1}, {1.0})));
  backward(loss);
  AdamW opt({p}, 0.0, 0.675, 0.999, 1e-8);
  opt.step(0.001);
  // m-hat = v-hat = 1 at step 1, so the update is lr / (1 + eps).
  CHECK(p.values()[0] == doctest::Approx(0.25 - 0.001 / (1.0 + 1e-8)).epsilon(1e-15));
}

TEST_CASE("optimizer trajectory matches a straight-line reimplementation") {
  std::mt19937_64 rng(99);
  Tensor64 a = Tensor64::uniform({3, 2}, -1.0, 1.0, rng);
  Tensor64 b = Tensor64::uniform({4}, -1.0, 1.0, rng);
  a.set_requires_grad(true);
  b.set_requires_grad(true);

  const double lr = 0.003, wd = 0.02, b1 = 0.675, b2 = 0.999, eps = 1e-8;
  std::vector<double> ra = a.values(), rb = b.values();
  std::vector<double> ma(6, 0), va(6, 0), mb(4, 0), vb(4, 0);

  AdamW opt({a, b}, wd, b1, b2, eps);
  for (int step = 1; step <= 20; ++step) {
    Tensor64 ca = Tensor64::uniform({3, 2}, -2.0, 2.0, rng);
    Tensor64 cb = Tensor64::uniform({4}, -2.0, 2.0, rng);
    a.zero_grad();
    b.zero_grad();
    backward(add(sum(mul(a, ca)), sum(mul(b, cb))));

    const double lr_t = cosine_lr(std::size_t(step - 1), 8, lr);
    opt.step(lr_t);

    // Reference update, written out directly from the definitions.
    auto reference = [&](std::vector<double>& p, std::vector<double>& m,
                         std::vector<double>& v, const std::vector<double>& g) {
      const double bc1 = 1.0 - std::pow(b1, step);
      const double bc2 = 1.0 - std::pow(b2, step);
      for (std::size_t j = 0; j < p.size(); ++j) {
        p[j] *= 1.0 - lr_t * wd;
        m[j] = b1 * m[j] + (1.0 - b1) * g[j];
        v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
        p[j] -= lr_t * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps);
      }
    };
    reference(ra, ma, va, ca.values());
    reference(rb, mb, vb, cb.values());

    for (std::size_t j = 0; j < 6; ++j) {
      CHECK(testutil::rel_err(a.values()[j], ra[j]) < 1e-12);
    }
    for (std::size_t j = 0; j < 4; ++j) {
      CHECK(testutil::rel_err(b.values()[j], rb[j]) < 1e-12);
    }
  }
}

TEST_CASE("optimizer demands populated gradients") {
  Tensor64 p = Tensor64::create({2}, {1.0, 2.0});
  p.set_requires_grad(true);
  AdamW opt({p}, 0.0, 0.9, 0.999, 1e-8);
  CHECK(error_code([&] { opt.step(0.001); }) == Err::ShapeMismatch);
}

TEST_CASE("stratified split carves every class proportionally") {
  EpochDataset ds;
  ds.channels = 1;
  ds.epoch_len = 4;
  ds.fs = 4;
  ds.window_s = 1;
  ds.subjects = {"s"};
  ds.recordings = {"r"};
  for (int e = 0; e < 30; ++e) {
    EpochProvenance p;
    p.label = e < 18 ? 0 : 1; // 18 zeros, 12 ones
    ds.index.push_back(p);
    for (int i = 0; i < 4; ++i) ds.data.push_back(double(e));
  }

  auto [rest, carve] = stratified_split(ds, 0.25, 7);
  CHECK(rest.size() + carve.size() == 30);
  std::map<int, int> carve_count;
  for (std::size_t e : carve) carve_count[ds.index[e].label]++;
  CHECK(carve_count[0] == 5); // round(0.25 * 18)
  CHECK(carve_count[1] == 3); // round(0.25 * 12)

  // Disjoint and exhaustive.
  std::set<std::size_t> all(rest.begin(), rest.end());
  all.insert(carve.begin(), carve.end());
  CHECK(all.size() == 30);

  // Deterministic per seed.
  auto again = stratified_split(ds, 0.25, 7);
  CHECK(again.first == rest);
  CHECK(again.second == carve);

  // Every class contributes at least one epoch to each side.
  auto [rest_small, carve_small] = stratified_split(ds, 0.01, 7);
  std::map<int, int> small_count;
  for (std::size_t e : carve_small) small_count[ds.index[e].label]++;
  CHECK(small_count[0] == 1);
  CHECK(small_count[1] == 1);

  CHECK(error_code([&] { stratified_split(ds, 0.0, 7); }) == Err::BadConfig);
  CHECK(error_code([&] { stratified_split(ds, 1.0, 7); }) == Err::BadConfig);

  ds.index[3].label = -1;
  CHECK(error_code([&] { stratified_split(ds, 0.25, 7); }) == Err::LabelOutOfRange);
  ds.index[3].label = 2; // a singleton class
  CHECK(error_code([&] { stratified_split(ds, 0.25, 7); }) == Err::ClassTooSmall);
}

TEST_CASE("select epochs copies the listed samples with provenance") {
  EpochDataset ds = gen_mi(mini_spec(3, 5));
  EpochDataset picked = select_epochs(ds, {4, 1});
  REQUIRE(picked.size() == 2);
  CHECK(picked.channels == ds.channels);
  CHECK(picked.epoch_len == ds.epoch_len);
  CHECK(picked.fs == ds.fs);
  CHECK(picked.subjects == ds.subjects);
  CHECK(picked.index[0].label == ds.index[4].label);
  CHECK(picked.index[1].label == ds.index[1].label);
  CHECK(std::equal(picked.epoch_ptr(0), picked.epoch_ptr(0) + picked.epoch_stride(),
                   ds.epoch_ptr(4)));
  CHECK(std::equal(picked.epoch_ptr(1), picked.epoch_ptr(1) + picked.epoch_stride(),
                   ds.epoch_ptr(1)));
  CHECK(select_epochs(ds, {}).size() == 0);
}

TEST_CASE("train config validation rejects out-of-range fields") {
  auto broken = [](auto mutate) {
    TrainConfig tc;
    mutate(tc);
    return error_code([&] { tc.validate(); });
  };
  CHECK(broken([](TrainConfig& tc) { tc.max_epochs = 0; }) == Err::BadConfig);
  CHECK(broken([](TrainConfig& tc) { tc.batch = 0; }) == Err::BadConfig);
  CHECK(broken([](TrainConfig& tc) { tc.t_max = 0; }) == Err::BadConfig);
  CHECK(broken([](TrainConfig& tc) { tc.patience = 0; }) == Err::BadConfig);
  CHECK(broken([](TrainConfig& tc) { tc.lr = 0.0; }) == Err::BadConfig);
  CHECK(broken([](TrainConfig& tc) { tc.lr_min = 0.002; }) == Err::BadConfig);
  CHECK(broken([](TrainConfig& tc) { tc.weight_decay = -0.1; }) == Err::BadConfig);
  CHECK(broken([](TrainConfig& tc) { tc.beta1 = 1.0; }) == Err::BadConfig);
  CHECK(broken([](TrainConfig& tc) { tc.beta2 = -0.5; }) == Err::BadConfig);
  CHECK(broken([](TrainConfig& tc) { tc.eps = 0.0; }) == Err::BadConfig);
  CHECK(broken([](TrainConfig& tc) { tc.val_fraction = 0.0; }) == Err::BadConfig);
  CHECK(broken([](TrainConfig& tc) { tc.val_fraction = 1.0; }) == Err::BadConfig);
  TrainConfig ok;
  ok.validate();
}

TEST_CASE("history records the cosine schedule verbatim and serializes as csv") {
  EpochDataset ds = gen_mi(mini_spec(12, 3));
  Hcft model(mini_config(), 1);
  TrainConfig tc;
  tc.max_epochs = 3;
  tc.batch = 8;
  tc.t_max = 2; // restart mid-run
  tc.patience = 10;
  tc.val_fraction = 0.25;
  tc.seed = 9;
  TrainResult res = train(model, ds, tc);

  REQUIRE(res.history.size() == 3);
  for (std::size_t e = 0; e < 3; ++e) {
    CHECK(res.history[e].epoch == e + 1);
    CHECK(res.history[e].lr == cosine_lr(e, tc.t_max, tc.lr, tc.lr_min));
    CHECK(std::isfinite(res.history[e].train_loss));
    CHECK(res.history[e].val_metric >= 0.0);
    CHECK(res.history[e].val_metric <= 1.0);
  }
  CHECK(res.best_epoch >= 1);
  CHECK(res.best_epoch <= 3);
  CHECK_FALSE(res.stopped_early);

  std::istringstream csv(res.history_csv());
  std::string line;
  REQUIRE(std::getline(csv, line));
  CHECK(line == "epoch,lr,train_loss,val_metric");
  std::size_t rows = 0;
  while (std::getline(csv, line)) {
    std::istringstream row(line);
    std::string cell;
    REQUIRE(std::getline(row, cell, ','));
    CHECK(std::stoul(cell) == rows + 1);
    REQUIRE(std::getline(row, cell, ','));
    CHECK(std::stod(cell) == res.history[rows].lr);
    REQUIRE(std::getline(row, cell, ','));
    CHECK(std::stod(cell) == doctest::Approx(res.history[rows].train_loss).epsilon(1e-15));
    REQUIRE(std::getline(row, cell, ','));
    CHECK(std::stod(cell) == doctest::Approx(res.history[rows].val_metric).epsilon(1e-15));
    ++rows;
  }
  CHECK(rows == 3);
}

TEST_CASE("training reduces the loss and memorizes a tiny synthetic task") {
  SynthSpec spec = mini_spec(10, 17);
  spec.snr = 4.0;
  EpochDataset ds = gen_mi(spec);
  Hcft model(mini_config(), 2);
  TrainConfig tc;
  tc.max_epochs = 120;
  tc.batch = 10;
  tc.patience = 120;
  tc.target_metric = 1.0; // run until the validation half is perfect
  tc.val_fraction = 0.5;
  tc.seed = 4;
  TrainResult res = train(model, ds, tc);

  REQUIRE(!res.history.empty());
  CHECK(res.history.back().train_loss < res.history.front().train_loss);
  CHECK(res.best_metric == 1.0);

  // The restored best weights classify the data they memorized.
  MetricsReport rep = evaluate(model, ds, 16, "train-set");
  CHECK(rep.folds.size() == 1);
  CHECK(rep.folds[0].second.accuracy == 1.0);
}

TEST_CASE("training stops immediately once the target metric is reached") {
  EpochDataset ds = gen_mi(mini_spec(8, 23));
  Hcft model(mini_config(), 3);
  TrainConfig tc;
  tc.max_epochs = 40;
  tc.batch = 8;
  tc.target_metric = 0.0; // any metric qualifies
  tc.seed = 2;
  TrainResult res = train(model, ds, tc);
  CHECK(res.history.size() == 1);
  CHECK(res.stopped_early);
}

TEST_CASE("patience exhaustion ends training early") {
  EpochDataset ds = gen_mi(mini_spec(8, 29));
  Hcft model(mini_config(), 5);
  TrainConfig tc;
  tc.max_epochs = 60;
  tc.batch = 8;
  tc.patience = 2;
  tc.seed = 6;
  TrainResult res = train(model, ds, tc);
  CHECK(res.history.size() < 60);
  CHECK(res.stopped_early);
  // The last `patience` epochs never improved on the best metric.
  for (std::size_t e = res.best_epoch; e < res.history.size(); ++e) {
    CHECK(res.history[e].val_metric <= res.best_metric);
  }
  CHECK(res.history.size() - res.best_epoch >= tc.patience);
}

TEST_CASE("training is bit-reproducible per seed and restores best weights") {
  EpochDataset ds = gen_mi(mini_spec(10, 31));
  TrainConfig tc;
  tc.max_epochs = 4;
  tc.batch = 8;
  tc.patience = 10;
  tc.seed = 12;

  Hcft first(mini_config(), 8);
  TrainResult res_a = train(first, ds, tc);
  Hcft second(mini_config(), 8);
  TrainResult res_b = train(second, ds, tc);

  CHECK(res_a.history_csv() == res_b.history_csv());
  CHECK(res_a.best_epoch == res_b.best_epoch);
  auto named_a = first.named_tensors();
  auto named_b = second.named_tensors();
  REQUIRE(named_a.size() == named_b.size());
  for (std::size_t i = 0; i < named_a.size(); ++i) {
    CHECK(named_a[i].first == named_b[i].first);
    CHECK(named_a[i].second.values() == named_b[i].second.values());
  }
}

TEST_CASE("train rejects mismatched data, labels, and monitors") {
  EpochDataset ds = gen_mi(mini_spec(4, 37));
  TrainConfig tc;
  tc.max_epochs = 1;
  tc.batch = 4;

  Hcft wrong_geis(ModelConfig{}, 1); // expects 3 x 500
  CHECK(error_code([&] { train(wrong_geis, ds, tc); }) == Err::GeometryMismatch);

  Hcft model(mini_config(), 1);
  EpochDataset unlabeled = ds;
  unlabeled.index[2].label = -1;
  CHECK(error_code([&] { train(model, unlabeled, tc); }) == Err::LabelOutOfRange);
  EpochDataset wide = ds;
  wide.index[2].label = 9;
  CHECK(error_code([&] { train(model, wide, tc); }) == Err::LabelOutOfRange);

  ModelConfig three = mini_config();
  three.n_classes = 3;
  Hcft multi(three, 1);
  TrainConfig auc_tc = tc;
  auc_tc.monitor = Monitor::Auc;
  EpochDataset three_ds = ds; // labels 0/1 are valid for a 3-class head
  CHECK(error_code([&] { train(multi, three_ds, auc_tc); }) == Err::BadConfig);
}

TEST_CASE("evaluate reports the model's own predictions as perfect agreement") {
  EpochDataset ds = gen_mi(mini_spec(6, 41));
  Hcft model(mini_config(), 4);
  const std::vector<int> preds = predict_labels(model, ds, 8);
  REQUIRE(preds.size() == ds.size());
  EpochDataset echo = ds;
  for (std::size_t e = 0; e < echo.size(); ++e) echo.index[e].label = preds[e];

  MetricsReport rep = evaluate(model, echo, 8, "echo");
  CHECK(rep.folds[0].first == "echo");
  CHECK(rep.folds[0].second.accuracy == 1.0);

  // Two runs of the same evaluation agree exactly.
  MetricsReport again = evaluate(model, echo, 8, "echo");
  CHECK(rep.to_kv() == again.to_kv());
  CHECK(rep.to_json() == again.to_json());
}

TEST_CASE("evaluate populates binary extras only when a class is present") {
  EpochDataset ds = gen_mi(mini_spec(6, 43));
  Hcft model(mini_config(), 4);

  MetricsReport both = evaluate(model, ds, 8, "both");
  const MetricValues& mv = both.folds[0].second;
  CHECK(mv.auc >= 0.0);
  CHECK(mv.auc <= 1.0);
  CHECK(mv.sensitivity >= 0.0);
  CHECK(mv.specificity >= 0.0);
  CHECK(mv.fpr_per_hour >= 0.0);

  // Negative-only data: specificity and alarm rate defined, the rest zeroed.
  std::vector<std::size_t> zeros;
  for (std::size_t e = 0; e < ds.size(); ++e) {
    if (ds.index[e].label == 0) zeros.push_back(e);
  }
  EpochDataset neg = select_epochs(ds, zeros);
  MetricsReport neg_rep = evaluate(model, neg, 8, "neg");
  CHECK(neg_rep.folds[0].second.sensitivity == 0.0);
  CHECK(neg_rep.folds[0].second.auc == 0.0);
  CHECK(neg_rep.folds[0].second.specificity >= 0.0);

  CHECK(error_code([&] { evaluate(model, select_epochs(ds, {}), 8, "none"); }) ==
        Err::EmptyMatrix);

  EpochDataset bad = ds;
  bad.index[0].label = 7;
  CHECK(error_code([&] { evaluate(model, bad, 8, "bad"); }) == Err::LabelOutOfRange);
}

TEST_CASE("scores are positive-class probabilities consistent with predictions") {
  EpochDataset ds = gen_mi(mini_spec(5, 47));
  Hcft model(mini_config(), 6);
  const std::vector<double> scores = predict_scores(model, ds, 4);
  const std::vector<int> preds = predict_labels(model, ds, 4);
  REQUIRE(scores.size() == ds.size());
  for (std::size_t e = 0; e < ds.size(); ++e) {
    CHECK(scores[e] >= 0.0);
    CHECK(scores[e] <= 1.0);
    if (scores[e] > 0.5) CHECK(preds[e] == 1);
    if (scores[e] < 0.5) CHECK(preds[e] == 0);
  }
  // Batch size must not change the outcome.
  CHECK(predict_scores(model, ds, 3) == scores);

  ModelConfig three = mini_config();
  three.n_classes = 3;
  Hcft multi(three, 1);
  CHECK(error_code([&] { predict_scores(multi, ds, 4); }) == Err::BadConfig);
}

TEST_CASE("leave-one-subject-out trains one fold per subject and aggregates") {
  EpochDataset pool;
  for (std::uint64_t s = 0; s < 3; ++s) {
    EpochDataset one = gen_mi(mini_spec(4, 100 + s));
    one.subjects[0] = "subj" + std::to_string(s + 1);
    if (pool.size() == 0) {
      pool = one;
    } else {
      append_epochs(pool, one);
    }
  }
  REQUIRE(pool.subjects.size() == 3);

  TrainConfig tc;
  tc.max_epochs = 1;
  tc.batch = 8;
  tc.val_fraction = 0.2;
  tc.seed = 3;
  MetricsReport rep = loso(mini_config(), pool, tc);

  REQUIRE(rep.folds.size() == 3);
  CHECK(rep.folds[0].first == "subj1");
  CHECK(rep.folds[1].first == "subj2");
  CHECK(rep.folds[2].first == "subj3");

  // Aggregation oracle: recompute mean and spread by hand.
  double mean_acc = 0;
  for (const auto& [name, mv] : rep.folds) mean_acc += mv.accuracy;
  mean_acc /= 3.0;
  double var = 0;
  for (const auto& [name, mv] : rep.folds) {
    var += (mv.accuracy - mean_acc) * (mv.accuracy - mean_acc);
  }
  CHECK(testutil::rel_err(rep.mean().accuracy, mean_acc) < 1e-12);
  CHECK(testutil::rel_err(rep.spread().accuracy, std::sqrt(var / 3.0)) < 1e-12);

  EpochDataset single = gen_mi(mini_spec(4, 1));
  CHECK(error_code([&] { loso(mini_config(), single, tc); }) == Err::SingleSubject);
}

TEST_CASE("loss stays finite over ten thousand optimizer steps on random data") {
  ModelConfig mc = mini_config();
  mc.in_length = 16;
  Hcft model(mc, 11);

  NamedTensors<double> named = model.named_tensors();
  std::vector<Tensor64> params;
  for (auto& [name, t] : named) {
    if (t.requires_grad()) params.push_back(t);
  }
  AdamW opt(params, 0.00125, 0.675, 0.999, 1e-8);

  std::mt19937_64 rng(2024);
  bool all_ok = true;
  for (int step = 0; step < 10000 && all_ok; ++step) {
    Tensor64 x = Tensor64::uniform({4, 2, 16}, -3.0, 3.0, rng);
    std::vector<int> y(4);
    for (auto& v : y) v = int(rng() % 2);
    for (auto& p : params) p.zero_grad();
    FwdCtx<double> ctx;
    ctx.mode = Mode::Train;
    ctx.rng = &rng;
    Tensor64 loss = cross_entropy(model.forward(x, ctx), y);
    all_ok = std::isfinite(loss.values()[0]);
    backward(loss);
    opt.step(cosine_lr(std::size_t(step) / 10, 32, 0.001));
  }
  CHECK(all_ok);
}
