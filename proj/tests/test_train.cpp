#include <doctest.h>

#include <cmath>
#include <sstream>
#include <vector>

#include "fer/train.hpp"

using fer::ConfusionMatrix;
using fer::ExperimentConfig;
using fer::Mode;
using fer::SeededRng;
using fer::Split;
using fer::Tensor;
using fer::VggConfig;
using fer::VggModel;

namespace {

ExperimentConfig tiny_experiment(std::uint64_t seed = 42) {
  ExperimentConfig cfg;
  cfg.model.stage_widths = {2, 2, 2, 2};
  cfg.model.fc_widths = {8, 8};
  cfg.model.dropout_p = 0.0;
  cfg.optim_kind = fer::OptimKind::SgdNesterov;
  cfg.hp.lr = 0.01;
  cfg.sched.kind = fer::SchedKind::Constant;
  cfg.sched.lr0 = 0.01;
  cfg.aug.transform_prob = 0.0;  // keep smoke runs deterministic targets
  cfg.aug.erase_prob = 0.0;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.seed = seed;
  cfg.no_timing = true;
  return cfg;
}

std::vector<fer::FerRecord> small_dataset() {
  return fer::make_synthetic_records(3, 2, 2, 11);
}

/// Zero-weight model whose fc3 bias pins every prediction to `cls`.
template <typename T>
VggModel<T> constant_logit_model(const VggConfig& cfg, int cls) {
  SeededRng rng(0);
  auto model = VggModel<T>::build(cfg, rng);
  for (auto& [name, t] : model.parameters()) {
    const bool keep_gamma = name.find("gamma") != std::string::npos;
    for (std::size_t i = 0; i < t->size(); ++i) {
      (*t)[i] = keep_gamma ? T{1} : T{0};
    }
  }
  auto params = model.parameters();
  for (auto& [name, t] : params) {
    if (name == "fc3.bias") (*t)[static_cast<std::size_t>(cls)] = T{1};
  }
  return model;
}

}  // namespace

TEST_CASE("confusion matrix: trace, totals, accuracy identity") {
  ConfusionMatrix cm;
  cm.at(0, 0) = 5;
  cm.at(0, 1) = 2;
  cm.at(3, 3) = 4;
  cm.at(4, 2) = 1;
  CHECK(cm.total() == 12);
  CHECK(cm.trace() == 9);
  CHECK(cm.accuracy() == doctest::Approx(9.0 / 12.0));
  CHECK(cm.row_sum(0) == 7);
}

TEST_CASE("aggregate: averaged probabilities decide, not majority votes") {
  // 10 crops of one record over 2 classes: six mildly favor class 0,
  // four strongly favor class 1; the probability average picks class 1.
  Tensor<double> probs({10, 2});
  for (std::size_t r = 0; r < 6; ++r) {
    probs.at(r, 0) = 0.51;
    probs.at(r, 1) = 0.49;
  }
  for (std::size_t r = 6; r < 10; ++r) {
    probs.at(r, 0) = 0.05;
    probs.at(r, 1) = 0.95;
  }
  std::vector<int> labels(10, 1);
  std::vector<int> record_ids(10, 0);
  ConfusionMatrix cm(2);
  fer::aggregate_ten_crop(probs, labels, record_ids, cm);
  CHECK(cm.at(1, 1) == 1);  // averaging wins over the 6-vs-4 vote
  CHECK(cm.total() == 1);
}

TEST_CASE("evaluate: constant-logit model scores the pinned class frequency") {
  auto records = fer::make_synthetic_records(0, 5, 0, 3);
  // skew the validation labels: relabel two records to class 2
  records[0].label = 2;
  records[7].label = 2;

  VggConfig cfg;
  cfg.stage_widths = {2, 2, 2, 2};
  cfg.fc_widths = {8, 8};
  cfg.dropout_p = 0.0;
  auto model = constant_logit_model<float>(cfg, 2);

  auto idx = fer::split_indices(records, Split::PublicTest);
  fer::AugmentConfig aug;
  fer::BatchStream<float> stream(&records, idx, aug, 1, 0, Mode::Eval, 8);
  auto result = fer::evaluate(model, stream);

  std::size_t class2 = 0;
  for (auto& r : records) {
    if (r.label == 2) ++class2;
  }
  CHECK(result.accuracy ==
        doctest::Approx(double(class2) / double(records.size())));
  CHECK(result.confusion.trace() == std::int64_t(class2));
  // every prediction lands in column 2
  for (std::size_t t = 0; t < 7; ++t) {
    for (std::size_t p = 0; p < 7; ++p) {
      if (p != 2) CHECK(result.confusion.at(t, p) == 0);
    }
  }
}

TEST_CASE("evaluate: confusion row sums equal per-class record counts") {
  auto records = fer::make_synthetic_records(0, 3, 0, 5);
  VggConfig cfg;
  cfg.stage_widths = {2, 2, 2, 2};
  cfg.fc_widths = {8, 8};
  cfg.dropout_p = 0.0;
  SeededRng rng(77);
  auto model = VggModel<float>::build(cfg, rng);

  auto idx = fer::split_indices(records, Split::PublicTest);
  fer::AugmentConfig aug;
  fer::BatchStream<float> stream(&records, idx, aug, 1, 0, Mode::Eval, 4);
  auto result = fer::evaluate(model, stream);
  CHECK(result.confusion.total() == 21);
  for (std::size_t c = 0; c < 7; ++c) {
    CHECK(result.confusion.row_sum(c) == 3);
  }
  CHECK(result.confusion.accuracy() == result.accuracy);
}

TEST_CASE("train_epoch: zero learning rate leaves parameters unchanged") {
  auto cfg = tiny_experiment();
  auto records = small_dataset();
  SeededRng rng(cfg.seed);
  auto model = VggModel<double>::build(cfg.model, rng);

  auto before = fer::train_detail::ParamSnapshot<double>::capture(model);

  fer::HyperParams hp = cfg.hp;
  hp.lr = 1e-300;  // effectively zero while satisfying lr > 0
  hp.weight_decay = 0.0;
  fer::Optimizer<double> opt(fer::OptimKind::Sgd, hp);
  auto idx = fer::split_indices(records, Split::Training);
  fer::BatchStream<double> stream(&records, idx, cfg.aug, cfg.seed, 0,
                                  Mode::Train, 4);
  SeededRng drop_rng(1);
  auto [loss, acc] = fer::train_epoch(model, opt, stream, 1.0, drop_rng);
  CHECK(std::isfinite(loss));
  CHECK(loss > 0);

  auto params = model.parameters();
  for (auto& [name, t] : params) {
    const auto& saved = before.values.at(name);
    for (std::size_t i = 0; i < t->size(); ++i) {
      CHECK(std::abs((*t)[i] - saved[i]) <= 1e-250);
    }
  }
}

TEST_CASE("train_epoch: loss decreases when overfitting 8 fixed samples") {
  auto cfg = tiny_experiment();
  auto records = fer::make_synthetic_records(2, 0, 0, 5);  // 14 records
  records.resize(8);  // 8 fixed samples
  SeededRng rng(cfg.seed);
  auto model = VggModel<double>::build(cfg.model, rng);
  fer::Optimizer<double> opt(cfg.optim_kind, cfg.hp);

  auto idx = fer::split_indices(records, Split::Training);
  REQUIRE(idx.size() == 8);
  double first_loss = 0, last_loss = 0;
  for (int epoch = 0; epoch < 20; ++epoch) {
    fer::BatchStream<double> stream(&records, idx, cfg.aug, cfg.seed,
                                    static_cast<std::uint64_t>(epoch),
                                    Mode::Train, 8);
    SeededRng drop_rng(cfg.seed, fer::substream(fer::kStreamDropout,
                                                static_cast<std::uint64_t>(epoch)));
    auto [loss, acc] = fer::train_epoch(model, opt, stream, 1.0, drop_rng);
    if (epoch == 0) first_loss = loss;
    last_loss = loss;
  }
  CHECK(last_loss < first_loss);
}

TEST_CASE("loss scaling is neutral in double precision") {
  auto cfg = tiny_experiment(7);
  auto records = small_dataset();

  auto run = [&](double scale) {
    ExperimentConfig c = cfg;
    c.loss_scale = scale;
    c.epochs = 2;
    SeededRng rng(c.seed);
    auto model = VggModel<double>::build(c.model, rng);
    fer::run_training_loop(model, c, records);
    return fer::train_detail::ParamSnapshot<double>::capture(model);
  };

  auto plain = run(1.0);
  auto scaled = run(1024.0);
  for (auto& [name, t] : plain.values) {
    const auto& other = scaled.values.at(name);
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double denom = std::max({std::abs(t[i]), std::abs(other[i]), 1e-12});
      CHECK(std::abs(t[i] - other[i]) / denom <= 1e-9);
    }
  }
}

TEST_CASE("run_experiment: identical seeds give identical metrics logs") {
  auto cfg = tiny_experiment(123);
  auto records = small_dataset();

  std::ostringstream log1, log2;
  fer::run_experiment<double>(cfg, records, &log1);
  fer::run_experiment<double>(cfg, records, &log2);
  CHECK(log1.str() == log2.str());
  CHECK(!log1.str().empty());
}

TEST_CASE("run_experiment: best checkpoint matches the log maximum") {
  auto cfg = tiny_experiment(55);
  cfg.epochs = 3;
  auto records = small_dataset();

  const auto ckpt =
      std::filesystem::temp_directory_path() / "fer_train_best.ckpt";
  auto result = fer::run_experiment<double>(cfg, records, nullptr, ckpt);

  double max_val = -1;
  for (auto& m : result.log) max_val = std::max(max_val, m.val_acc);
  CHECK(result.best_val_accuracy == max_val);

  auto loaded = fer::load_checkpoint<double>(ckpt);
  CHECK(loaded.extras.best_val_accuracy == max_val);
  CHECK(loaded.extras.epoch == std::uint64_t(result.best_epoch));
  std::filesystem::remove(ckpt);
}

TEST_CASE("run_experiment: rlrp consumes validation accuracy") {
  auto cfg = tiny_experiment(9);
  cfg.sched.kind = fer::SchedKind::Rlrp;
  cfg.sched.lr0 = 0.01;
  cfg.sched.rlrp_patience = 1;
  cfg.epochs = 4;
  auto records = small_dataset();
  auto result = fer::run_experiment<double>(cfg, records);
  REQUIRE(result.log.size() == 4);
  // with patience 1 on a tiny noisy run, the lr either stays or decays by
  // powers of 0.75; every logged lr must be one of those values
  for (auto& m : result.log) {
    double ratio = m.lr / 0.01;
    double k = std::log(ratio) / std::log(0.75);
    CHECK(std::abs(k - std::round(k)) <= 1e-9);
  }
}

TEST_CASE("fine_tune: initial lr 1e-4, merged split grows training set") {
  auto cfg = tiny_experiment(31);
  cfg.epochs = 2;
  auto records = small_dataset();

  const auto ckpt = std::filesystem::temp_directory_path() / "fer_ft_base.ckpt";
  fer::run_experiment<double>(cfg, records, nullptr, ckpt);

  ExperimentConfig ft = cfg;
  ft.finetune_epochs = 3;
  ft.sched.kind = fer::SchedKind::Cosine;
  ft.sched.lr0 = 1e-4;
  ft.sched.eta_min = 0.0;
  ft.hp.lr = 1e-4;

  std::ostringstream log;
  auto result = fer::fine_tune<double>(ckpt, ft, records, false, &log);
  REQUIRE(result.log.size() == 3);
  CHECK(result.log[0].lr == doctest::Approx(1e-4).epsilon(1e-12));

  // merged variant: no validation column, selection on the final epoch
  auto merged = fer::fine_tune<double>(ckpt, ft, records, true);
  CHECK(merged.log.back().val_acc == -1);
  CHECK(merged.best_epoch == 2);

  // merge grows the training set by exactly the validation count
  auto counts = fer::class_split_counts(records);
  std::size_t train_n = 0, val_n = 0;
  for (int c = 0; c < 7; ++c) {
    train_n += counts[c][0];
    val_n += counts[c][1];
  }
  auto merged_records = fer::merge_train_val(records, Split::PublicTest);
  auto merged_counts = fer::class_split_counts(merged_records);
  std::size_t merged_train = 0;
  for (int c = 0; c < 7; ++c) merged_train += merged_counts[c][0];
  CHECK(merged_train == train_n + val_n);

  std::filesystem::remove(ckpt);
}

TEST_CASE("fine_tune rejects non-cosine schedules") {
  auto cfg = tiny_experiment();
  cfg.sched.kind = fer::SchedKind::StepLr;
  CHECK_THROWS_AS(
      fer::fine_tune<double>("nonexistent.ckpt", cfg, small_dataset(), false),
      fer::ConfigError);
}
