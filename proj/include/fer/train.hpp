#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "fer/checkpoint.hpp"
#include "fer/data.hpp"
#include "fer/errors.hpp"
#include "fer/model.hpp"
#include "fer/nn.hpp"
#include "fer/optim.hpp"
#include "fer/sched.hpp"
#include "fer/tensor.hpp"

namespace fer {

struct ConfusionMatrix {
  std::size_t n_classes = kNumClasses;
  std::vector<std::int64_t> counts;  // row-major, rows = true class

  ConfusionMatrix() : counts(kNumClasses * kNumClasses, 0) {}
  explicit ConfusionMatrix(std::size_t n) : n_classes(n), counts(n * n, 0) {}

  std::int64_t& at(std::size_t truth, std::size_t pred) {
    return counts[truth * n_classes + pred];
  }
  std::int64_t at(std::size_t truth, std::size_t pred) const {
    return counts[truth * n_classes + pred];
  }
  std::int64_t total() const {
    std::int64_t t = 0;
    for (auto v : counts) t += v;
    return t;
  }
  std::int64_t trace() const {
    std::int64_t t = 0;
    for (std::size_t i = 0; i < n_classes; ++i) t += at(i, i);
    return t;
  }
  double accuracy() const {
    const std::int64_t tot = total();
    return tot == 0 ? 0.0 : static_cast<double>(trace()) / static_cast<double>(tot);
  }
  std::int64_t row_sum(std::size_t truth) const {
    std::int64_t t = 0;
    for (std::size_t j = 0; j < n_classes; ++j) t += at(truth, j);
    return t;
  }
};

struct EvalResult {
  double accuracy = 0.0;
  ConfusionMatrix confusion;
};

struct EpochMetrics {
  int epoch = 0;
  double lr = 0;
  double train_loss = 0;
  double train_acc = 0;
  double val_acc = -1;  // -1 when the run has no validation split
  double seconds = 0;
};

inline std::string format_metrics_line(const EpochMetrics& m) {
  char buf[192];
  std::snprintf(buf, sizeof(buf), "%d\t%.10g\t%.8f\t%.6f\t%.6f\t%.3f", m.epoch,
                m.lr, m.train_loss, m.train_acc, m.val_acc, m.seconds);
  return buf;
}

inline std::string format_accuracy(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

struct ExperimentConfig {
  VggConfig model;
  OptimKind optim_kind = OptimKind::SgdNesterov;
  HyperParams hp;
  SchedConfig sched;
  AugmentConfig aug;
  TrainCrops train_crops = TrainCrops::Ten;
  int epochs = 300;
  int finetune_epochs = 50;
  std::size_t batch_size = 64;
  std::uint64_t seed = 1234;
  double loss_scale = 1.0;  // static loss scaling; 1 disables
  bool avg_logits = false;  // average raw logits instead of probabilities
  bool no_timing = false;   // zero the seconds column for byte-stable logs
  int limit_per_class = 0;  // 0 = use everything
  Split val_split = Split::PublicTest;
  Split test_split = Split::PrivateTest;

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (!(loss_scale > 0)) throw ConfigError("loss_scale must be > 0");
    hp.validate();
    aug.validate();
  }
};

// ---------------------------------------------------------------------------
// One epoch of optimization
// ---------------------------------------------------------------------------

template <typename T>
std::pair<double, double> train_epoch(VggModel<T>& model, Optimizer<T>& opt,
                                      BatchStream<T>& batches,
                                      double loss_scale,
                                      SeededRng& dropout_rng) {
  double loss_sum = 0;
  std::size_t crops = 0, correct = 0, batch_id = 0;
  auto params = model.parameters();

  while (auto batch = batches.next()) {
    auto logits = model.forward(batch->images, Mode::Train, &dropout_rng);
    auto loss = softmax_cross_entropy(logits, batch->labels);
    if (!std::isfinite(loss.loss)) {
      throw NumericError("non-finite loss in batch " + std::to_string(batch_id));
    }
    Tensor<T> grad = loss.logit_grad;
    if (loss_scale != 1.0) {
      grad = scale(grad, static_cast<T>(loss_scale));
    }
    auto back = model.backward(grad);
    if (loss_scale != 1.0) {
      const T inv = static_cast<T>(1.0 / loss_scale);
      for (auto& [name, g] : back.grads) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] *= inv;
      }
    }
    opt.step(params, back.grads);

    const auto preds = argmax_rows(logits);
    for (std::size_t i = 0; i < preds.size(); ++i) {
      if (static_cast<int>(preds[i]) == batch->labels[i]) ++correct;
    }
    loss_sum += loss.loss * static_cast<double>(preds.size());
    crops += preds.size();
    ++batch_id;
  }
  return {loss_sum / static_cast<double>(crops),
          static_cast<double>(correct) / static_cast<double>(crops)};
}

// ---------------------------------------------------------------------------
// Ten-crop evaluation: softmax probabilities (or raw logits) are averaged
// over the ten crops of each record, and the argmax of the average decides.
// Accuracy and confusion counts are per record, not per crop.
// ---------------------------------------------------------------------------

template <typename T>
void aggregate_ten_crop(const Tensor<T>& scores,
                        const std::vector<int>& labels,
                        const std::vector<int>& record_ids,
                        ConfusionMatrix& confusion) {
  const std::size_t rows = scores.shape()[0], k = scores.shape()[1];
  std::size_t i = 0;
  while (i < rows) {
    std::size_t j = i;
    while (j < rows && record_ids[j] == record_ids[i]) ++j;
    std::vector<double> mean(k, 0.0);
    for (std::size_t r = i; r < j; ++r) {
      for (std::size_t c = 0; c < k; ++c) {
        mean[c] += static_cast<double>(scores.data()[r * k + c]);
      }
    }
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c) {
      if (mean[c] > mean[best]) best = c;
    }
    confusion.at(static_cast<std::size_t>(labels[i]), best) += 1;
    i = j;
  }
}

template <typename T>
EvalResult evaluate(VggModel<T>& model, BatchStream<T>& batches,
                    bool avg_logits = false) {
  EvalResult result;
  result.confusion = ConfusionMatrix(model.config().n_classes);
  while (auto batch = batches.next()) {
    auto logits = model.forward(batch->images, Mode::Eval);
    if (avg_logits) {
      aggregate_ten_crop(logits, batch->labels, batch->record_ids,
                         result.confusion);
    } else {
      auto probs = softmax_rows(logits);
      aggregate_ten_crop(probs, batch->labels, batch->record_ids,
                         result.confusion);
    }
  }
  result.accuracy = result.confusion.accuracy();
  return result;
}

// ---------------------------------------------------------------------------
// Full experiment loop
// ---------------------------------------------------------------------------

struct RunResult {
  std::vector<EpochMetrics> log;
  double best_val_accuracy = -1;
  int best_epoch = -1;
  bool has_test = false;
  double test_accuracy = 0;
  ConfusionMatrix test_confusion;
};

namespace train_detail {

template <typename T>
struct ParamSnapshot {
  std::map<std::string, Tensor<T>> values;

  static ParamSnapshot capture(VggModel<T>& model) {
    ParamSnapshot s;
    for (auto& [name, t] : model.parameters()) s.values[name] = *t;
    for (auto& [name, t] : model.buffers()) s.values[name] = *t;
    return s;
  }

  void restore(VggModel<T>& model) const {
    for (auto& [name, t] : model.parameters()) *t = values.at(name);
    for (auto& [name, t] : model.buffers()) *t = values.at(name);
  }
};

}  // namespace train_detail

/// Runs `cfg.epochs` epochs on an existing model: scheduler-driven learning
/// rate, per-epoch ten-crop validation, best-by-validation checkpointing
/// (final-epoch selection when the run has no validation split), and a final
/// ten-crop test evaluation of the selected parameters. Metrics stream to
/// `metrics_out` as they happen; `ckpt_path`, when non-empty, receives the
/// selected checkpoint (written atomically on every improvement, so an
/// interrupted run keeps its last complete checkpoint).
template <typename T>
RunResult run_training_loop(VggModel<T>& model, const ExperimentConfig& cfg,
                            const std::vector<FerRecord>& records,
                            std::ostream* metrics_out = nullptr,
                            const std::filesystem::path& ckpt_path = {}) {
  cfg.validate();
  RunResult result;

  const auto train_idx =
      split_indices(records, Split::Training, cfg.limit_per_class);
  if (train_idx.empty()) throw DataError("no training records");
  const auto val_idx =
      split_indices(records, cfg.val_split, cfg.limit_per_class);
  const auto test_idx =
      split_indices(records, cfg.test_split, cfg.limit_per_class);
  const bool has_val = !val_idx.empty();

  Optimizer<T> opt(cfg.optim_kind, cfg.hp);
  Scheduler sched(cfg.sched);
  auto params = model.parameters();
  std::optional<train_detail::ParamSnapshot<T>> best;

  auto save_best = [&](int epoch, double val_acc) {
    best = train_detail::ParamSnapshot<T>::capture(model);
    result.best_val_accuracy = val_acc;
    result.best_epoch = epoch;
    if (!ckpt_path.empty()) {
      CheckpointExtras extras;
      extras.epoch = static_cast<std::uint64_t>(epoch);
      extras.best_val_accuracy = val_acc;
      save_checkpoint(ckpt_path, model, extras, &opt, &sched);
    }
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();

    if (cfg.sched.restore_best_on_restart && sched.is_restart_epoch(epoch) &&
        best) {
      best->restore(model);
    }

    const double lr = sched.lr_for_epoch(epoch);
    opt.hyperparams().lr = lr;

    SeededRng dropout_rng(cfg.seed, substream(kStreamDropout,
                                              static_cast<std::uint64_t>(epoch)));
    BatchStream<T> train_stream(&records, train_idx, cfg.aug, cfg.seed,
                                static_cast<std::uint64_t>(epoch), Mode::Train,
                                cfg.batch_size, cfg.train_crops);
    const auto [train_loss, train_acc] =
        train_epoch(model, opt, train_stream, cfg.loss_scale, dropout_rng);

    double val_acc = -1;
    if (has_val) {
      const bool averaged = cfg.optim_kind == OptimKind::Asgd;
      if (averaged) opt.swap_in_average(params);
      BatchStream<T> val_stream(&records, val_idx, cfg.aug, cfg.seed, 0,
                                Mode::Eval, cfg.batch_size);
      val_acc = evaluate(model, val_stream, cfg.avg_logits).accuracy;
      sched.observe(val_acc);
      if (val_acc > result.best_val_accuracy) {
        save_best(epoch, val_acc);  // snapshot sees averaged weights
      }
      if (averaged) opt.swap_out_average(params);
    } else {
      // no validation split: final-epoch selection, checkpoint every epoch
      save_best(epoch, -1);
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.lr = lr;
    m.train_loss = train_loss;
    m.train_acc = train_acc;
    m.val_acc = val_acc;
    m.seconds =
        cfg.no_timing
            ? 0.0
            : std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                  .count();
    result.log.push_back(m);
    if (metrics_out) {
      (*metrics_out) << format_metrics_line(m) << '\n';
      metrics_out->flush();
    }
  }

  if (best) best->restore(model);
  if (!test_idx.empty()) {
    BatchStream<T> test_stream(&records, test_idx, cfg.aug, cfg.seed, 0,
                               Mode::Eval, cfg.batch_size);
    auto test = evaluate(model, test_stream, cfg.avg_logits);
    result.has_test = true;
    result.test_accuracy = test.accuracy;
    result.test_confusion = test.confusion;
  }

  if (metrics_out && result.has_test) {
    (*metrics_out) << "summary\t" << format_accuracy(result.test_accuracy);
    for (auto v : result.test_confusion.counts) (*metrics_out) << '\t' << v;
    (*metrics_out) << '\n';
    metrics_out->flush();
  }
  return result;
}

/// Builds a fresh seeded model and runs the full loop.
template <typename T>
RunResult run_experiment(const ExperimentConfig& cfg,
                         const std::vector<FerRecord>& records,
                         std::ostream* metrics_out = nullptr,
                         const std::filesystem::path& ckpt_path = {}) {
  SeededRng init_rng(cfg.seed);
  auto model = VggModel<T>::build(cfg.model, init_rng);
  return run_training_loop(model, cfg, records, metrics_out, ckpt_path);
}

/// Reloads a trained checkpoint and tunes it for cfg.finetune_epochs at a
/// small initial learning rate under a cosine-family schedule. With
/// merge_val, the validation split joins the training split and selection
/// falls back to the final epoch; the test split is untouched either way.
template <typename T>
RunResult fine_tune(const std::filesystem::path& checkpoint,
                    const ExperimentConfig& base_cfg,
                    const std::vector<FerRecord>& records, bool merge_val,
                    std::ostream* metrics_out = nullptr,
                    const std::filesystem::path& out_ckpt = {}) {
  if (base_cfg.sched.kind != SchedKind::Cosine &&
      base_cfg.sched.kind != SchedKind::CosineWR) {
    throw ConfigError("fine-tuning uses the cosine or cosine-wr schedule");
  }
  auto loaded = load_checkpoint<T>(checkpoint);

  ExperimentConfig cfg = base_cfg;
  cfg.model = loaded.model.config();
  cfg.epochs = base_cfg.finetune_epochs;
  cfg.sched.cosine_t_max = cfg.epochs;

  std::vector<FerRecord> working = records;
  if (merge_val) {
    working = merge_train_val(std::move(working), cfg.val_split);
  }
  return run_training_loop(loaded.model, cfg, working, metrics_out, out_ckpt);
}

}  // namespace fer
