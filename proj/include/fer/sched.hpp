#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>

#include "fer/errors.hpp"

namespace fer {

enum class SchedKind { Constant, Rlrp, Cosine, CosineWR, OneCycle, StepLr };

inline const char* sched_kind_name(SchedKind k) {
  switch (k) {
    case SchedKind::Constant: return "constant";
    case SchedKind::Rlrp: return "rlrp";
    case SchedKind::Cosine: return "cosine";
    case SchedKind::CosineWR: return "cosine-wr";
    case SchedKind::OneCycle: return "one-cycle";
    case SchedKind::StepLr: return "step";
  }
  return "?";
}

struct SchedConfig {
  SchedKind kind = SchedKind::Rlrp;
  double lr0 = 0.01;  // initial lr; eta_max for the cosine family

  // reduce-on-plateau: monitors validation accuracy (max mode)
  double rlrp_factor = 0.75;
  int rlrp_patience = 5;
  double rlrp_min_delta = 0.0;
  double rlrp_min_lr = 1e-6;

  // cosine annealing
  int cosine_t_max = 300;
  double eta_min = 0.0;

  // warm restarts
  int wr_t0 = 10;
  int wr_t_mult = 2;
  bool restore_best_on_restart = false;  // reload best checkpoint at restarts

  // one-cycle
  double oc_max_lr = 0.01;
  double oc_pct_start = 0.3;
  double oc_div = 25.0;
  double oc_final_div = 1e4;
  int oc_total = 300;

  // step decay
  int step_size = 30;
  double step_gamma = 0.1;
};

/// Epoch-level learning-rate schedules. The closed-form kinds are pure
/// functions of the epoch index; reduce-on-plateau is driven by observe()
/// once per epoch with that epoch's validation accuracy.
class Scheduler {
 public:
  Scheduler() = default;
  explicit Scheduler(SchedConfig cfg) : cfg_(cfg), current_lr_(cfg.lr0) {}

  const SchedConfig& config() const { return cfg_; }

  double lr_for_epoch(int epoch) const {
    if (epoch < 0) throw ConfigError("epoch must be >= 0");
    switch (cfg_.kind) {
      case SchedKind::Constant:
        return cfg_.lr0;
      case SchedKind::Rlrp:
        return current_lr_;
      case SchedKind::StepLr:
        return cfg_.lr0 * std::pow(cfg_.step_gamma, epoch / cfg_.step_size);
      case SchedKind::Cosine:
        return cosine_at(epoch, cfg_.cosine_t_max);
      case SchedKind::CosineWR: {
        auto [pos, len] = wr_cycle_position(epoch);
        return cosine_at(pos, len);
      }
      case SchedKind::OneCycle:
        return one_cycle_at(epoch);
    }
    throw ConfigError("unknown scheduler kind");
  }

  /// Reduce-on-plateau update; call once per epoch with the validation
  /// accuracy. No-op for every other kind.
  void observe(double val_accuracy) {
    if (!std::isfinite(val_accuracy)) {
      throw NumericError("non-finite metric passed to scheduler");
    }
    if (cfg_.kind != SchedKind::Rlrp) return;
    if (val_accuracy > best_metric_ + cfg_.rlrp_min_delta) {
      best_metric_ = val_accuracy;
      bad_epochs_ = 0;
      return;
    }
    if (++bad_epochs_ >= cfg_.rlrp_patience) {
      current_lr_ = std::max(current_lr_ * cfg_.rlrp_factor, cfg_.rlrp_min_lr);
      bad_epochs_ = 0;
    }
  }

  /// True at the first epoch of every warm-restart cycle after the first.
  bool is_restart_epoch(int epoch) const {
    if (cfg_.kind != SchedKind::CosineWR || epoch == 0) return false;
    return wr_cycle_position(epoch).first == 0;
  }

  double current_lr() const { return current_lr_; }
  double best_metric() const { return best_metric_; }
  int bad_epochs() const { return bad_epochs_; }

  void restore(double lr, double best, int bad) {
    current_lr_ = lr;
    best_metric_ = best;
    bad_epochs_ = bad;
  }

 private:
  double cosine_at(int pos, int t_max) const {
    const double pi = 3.14159265358979323846;
    return cfg_.eta_min + 0.5 * (cfg_.lr0 - cfg_.eta_min) *
                              (1.0 + std::cos(pi * static_cast<double>(pos) /
                                              static_cast<double>(t_max)));
  }

  // Cycle k has length T_0 * T_mult^k; the position resets at each restart.
  std::pair<int, int> wr_cycle_position(int epoch) const {
    int start = 0;
    int len = cfg_.wr_t0;
    while (epoch >= start + len) {
      start += len;
      if (cfg_.wr_t_mult > 1) {
        len *= cfg_.wr_t_mult;
      }
    }
    return {epoch - start, len};
  }

  // Linear ramp from max_lr/div to max_lr over the first pct_start of the
  // horizon, then cosine decay down to max_lr/final_div at the last epoch.
  double one_cycle_at(int epoch) const {
    const int total = cfg_.oc_total;
    if (epoch >= total) {
      throw ScheduleExhaustedError(
          "one-cycle schedule exhausted: epoch " + std::to_string(epoch) +
          " of " + std::to_string(total));
    }
    const double start_lr = cfg_.oc_max_lr / cfg_.oc_div;
    const double final_lr = cfg_.oc_max_lr / cfg_.oc_final_div;
    int up = static_cast<int>(
        std::llround(cfg_.oc_pct_start * static_cast<double>(total)));
    if (up > total - 1) up = total - 1;
    if (up < 1) up = 1;
    if (epoch <= up) {
      return start_lr + (cfg_.oc_max_lr - start_lr) *
                            (static_cast<double>(epoch) / static_cast<double>(up));
    }
    const double pi = 3.14159265358979323846;
    const double pos = static_cast<double>(epoch - up) /
                       static_cast<double>(total - 1 - up);
    return final_lr + (cfg_.oc_max_lr - final_lr) * 0.5 * (1.0 + std::cos(pi * pos));
  }

  SchedConfig cfg_;
  double current_lr_ = 0.01;
  double best_metric_ = -1e300;
  int bad_epochs_ = 0;
};

}  // namespace fer
