#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "fer/errors.hpp"
#include "fer/tensor.hpp"

namespace fer {

enum class OptimKind {
  Sgd,
  SgdNesterov,
  Asgd,
  Adam,
  AdamAmsgrad,
  Adadelta,
  Adagrad,
};

inline const char* optim_kind_name(OptimKind k) {
  switch (k) {
    case OptimKind::Sgd: return "sgd";
    case OptimKind::SgdNesterov: return "sgd-nesterov";
    case OptimKind::Asgd: return "asgd";
    case OptimKind::Adam: return "adam";
    case OptimKind::AdamAmsgrad: return "adam-amsgrad";
    case OptimKind::Adadelta: return "adadelta";
    case OptimKind::Adagrad: return "adagrad";
  }
  return "?";
}

struct HyperParams {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;  // L2, added to the gradient
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_adam = 1e-8;
  double eps_adagrad = 1e-10;
  double eps_adadelta = 1e-6;
  double rho = 0.9;           // adadelta decay
  std::uint64_t asgd_t0 = 0;  // averaging starts after this step

  void validate() const {
    if (!(lr > 0)) throw ConfigError("optimizer lr must be > 0");
    if (momentum < 0 || momentum >= 1) {
      throw ConfigError("momentum must be in [0,1)");
    }
    if (weight_decay < 0) throw ConfigError("weight_decay must be >= 0");
  }
};

template <typename T>
using ParamRefs = std::vector<std::pair<std::string, Tensor<T>*>>;

template <typename T>
using GradMap = std::map<std::string, Tensor<T>>;

/// One of the seven first-order update rules, applied in place to a named
/// parameter registry. Every variant sees the effective gradient
/// g' = g + weight_decay * theta; momentum buffers exist only for the
/// SGD family.
template <typename T>
class Optimizer {
 public:
  Optimizer() = default;
  Optimizer(OptimKind kind, HyperParams hp) : kind_(kind), hp_(hp) {
    hp_.validate();
  }

  OptimKind kind() const { return kind_; }
  HyperParams& hyperparams() { return hp_; }
  const HyperParams& hyperparams() const { return hp_; }
  std::uint64_t step_count() const { return step_count_; }

  void step(const ParamRefs<T>& params, const GradMap<T>& grads) {
    validate_registry(params, grads);
    ++step_count_;
    if (kind_ == OptimKind::Asgd && step_count_ > hp_.asgd_t0) {
      ++avg_samples_;  // this step's post-update parameters enter the mean
    }

    for (auto& [name, theta] : params) {
      const Tensor<T>& g = grads.at(name);
      if (!g.same_shape(*theta)) {
        throw RegistryError("gradient shape mismatch for " + name);
      }
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (!std::isfinite(static_cast<double>(g[i]))) {
          throw NumericError("non-finite gradient in " + name);
        }
      }
      apply_update(name, *theta, g);
    }
  }

  /// ASGD only: replace parameters with the running average for evaluation,
  /// stashing the working values. If no steps beyond t0 happened yet, the
  /// average is defined as the current parameters.
  void swap_in_average(const ParamRefs<T>& params) {
    if (kind_ != OptimKind::Asgd) {
      throw StateError("parameter averaging requires the ASGD optimizer");
    }
    if (step_count_ == 0) {
      throw StateError("parameter averaging requires at least one step");
    }
    if (swapped_) throw StateError("average already swapped in");
    for (auto& [name, theta] : params) {
      stash_[name] = *theta;
      if (avg_samples_ > 0) {
        *theta = state_[name].avg;
      }
    }
    swapped_ = true;
  }

  /// Restores the working parameters after an averaged evaluation.
  void swap_out_average(const ParamRefs<T>& params) {
    if (!swapped_) throw StateError("no averaged parameters to swap out");
    for (auto& [name, theta] : params) {
      *theta = stash_.at(name);
    }
    stash_.clear();
    swapped_ = false;
  }

  std::uint64_t average_sample_count() const { return avg_samples_; }

  /// Buffer access for checkpoint serialization: (param name, slot, tensor).
  std::vector<std::tuple<std::string, std::string, const Tensor<T>*>>
  serialized_buffers() const {
    std::vector<std::tuple<std::string, std::string, const Tensor<T>*>> out;
    for (const auto& [name, st] : state_) {
      if (!st.velocity.empty()) out.emplace_back(name, "velocity", &st.velocity);
      if (!st.m.empty()) out.emplace_back(name, "m", &st.m);
      if (!st.v.empty()) out.emplace_back(name, "v", &st.v);
      if (!st.vmax.empty()) out.emplace_back(name, "vmax", &st.vmax);
      if (!st.acc_g2.empty()) out.emplace_back(name, "acc_g2", &st.acc_g2);
      if (!st.acc_dx2.empty()) out.emplace_back(name, "acc_dx2", &st.acc_dx2);
      if (!st.avg.empty()) out.emplace_back(name, "avg", &st.avg);
    }
    return out;
  }

  void restore_buffer(const std::string& param, const std::string& slot,
                      Tensor<T> t) {
    auto& st = state_[param];
    if (slot == "velocity") st.velocity = std::move(t);
    else if (slot == "m") st.m = std::move(t);
    else if (slot == "v") st.v = std::move(t);
    else if (slot == "vmax") st.vmax = std::move(t);
    else if (slot == "acc_g2") st.acc_g2 = std::move(t);
    else if (slot == "acc_dx2") st.acc_dx2 = std::move(t);
    else if (slot == "avg") st.avg = std::move(t);
    else throw CheckpointError("unknown optimizer buffer slot " + slot);
  }

  void restore_counters(std::uint64_t steps, std::uint64_t avg_samples) {
    step_count_ = steps;
    avg_samples_ = avg_samples;
  }

 private:
  struct ParamState {
    Tensor<T> velocity;  // SGD family
    Tensor<T> m, v, vmax;        // Adam / AMSGrad
    Tensor<T> acc_g2, acc_dx2;   // Adadelta ("acc_g2" doubles for Adagrad)
    Tensor<T> avg;               // ASGD running average
  };

  void validate_registry(const ParamRefs<T>& params, const GradMap<T>& grads) {
    if (grads.size() != params.size()) {
      throw RegistryError("gradient registry has " +
                          std::to_string(grads.size()) + " entries, expected " +
                          std::to_string(params.size()));
    }
    for (auto& [name, theta] : params) {
      if (grads.find(name) == grads.end()) {
        throw RegistryError("missing gradient for parameter " + name);
      }
    }
  }

  void apply_update(const std::string& name, Tensor<T>& theta,
                    const Tensor<T>& g) {
    auto& st = state_[name];
    const double lr = hp_.lr;
    const double mu = hp_.momentum;
    const double wd = hp_.weight_decay;

    switch (kind_) {
      case OptimKind::Sgd: {
        if (st.velocity.empty()) st.velocity = Tensor<T>::zeros(theta.shape());
        for (std::size_t i = 0; i < theta.size(); ++i) {
          const T ge = static_cast<T>(g[i] + wd * theta[i]);
          st.velocity[i] = static_cast<T>(mu * st.velocity[i] + ge);
          theta[i] = static_cast<T>(theta[i] - lr * st.velocity[i]);
        }
        break;
      }
      case OptimKind::SgdNesterov: {
        if (st.velocity.empty()) st.velocity = Tensor<T>::zeros(theta.shape());
        for (std::size_t i = 0; i < theta.size(); ++i) {
          const T ge = static_cast<T>(g[i] + wd * theta[i]);
          st.velocity[i] = static_cast<T>(mu * st.velocity[i] + ge);
          theta[i] = static_cast<T>(theta[i] - lr * (ge + mu * st.velocity[i]));
        }
        break;
      }
      case OptimKind::Asgd: {
        if (st.velocity.empty()) {
          st.velocity = Tensor<T>::zeros(theta.shape());
          st.avg = Tensor<T>::zeros(theta.shape());
        }
        for (std::size_t i = 0; i < theta.size(); ++i) {
          const T ge = static_cast<T>(g[i] + wd * theta[i]);
          st.velocity[i] = static_cast<T>(mu * st.velocity[i] + ge);
          theta[i] = static_cast<T>(theta[i] - lr * st.velocity[i]);
        }
        break;  // averaging handled once per step, below in step()
      }
      case OptimKind::Adagrad: {
        if (st.acc_g2.empty()) st.acc_g2 = Tensor<T>::zeros(theta.shape());
        for (std::size_t i = 0; i < theta.size(); ++i) {
          const double ge = g[i] + wd * theta[i];
          st.acc_g2[i] = static_cast<T>(st.acc_g2[i] + ge * ge);
          theta[i] = static_cast<T>(
              theta[i] -
              lr * ge / (std::sqrt(static_cast<double>(st.acc_g2[i])) +
                         hp_.eps_adagrad));
        }
        break;
      }
      case OptimKind::Adadelta: {
        if (st.acc_g2.empty()) {
          st.acc_g2 = Tensor<T>::zeros(theta.shape());
          st.acc_dx2 = Tensor<T>::zeros(theta.shape());
        }
        const double rho = hp_.rho, eps = hp_.eps_adadelta;
        for (std::size_t i = 0; i < theta.size(); ++i) {
          const double ge = g[i] + wd * theta[i];
          st.acc_g2[i] = static_cast<T>(rho * st.acc_g2[i] + (1 - rho) * ge * ge);
          const double dx = -std::sqrt((static_cast<double>(st.acc_dx2[i]) + eps) /
                                       (static_cast<double>(st.acc_g2[i]) + eps)) *
                            ge;
          st.acc_dx2[i] = static_cast<T>(rho * st.acc_dx2[i] + (1 - rho) * dx * dx);
          theta[i] = static_cast<T>(theta[i] + lr * dx);
        }
        break;
      }
      case OptimKind::Adam:
      case OptimKind::AdamAmsgrad: {
        if (st.m.empty()) {
          st.m = Tensor<T>::zeros(theta.shape());
          st.v = Tensor<T>::zeros(theta.shape());
          if (kind_ == OptimKind::AdamAmsgrad) {
            st.vmax = Tensor<T>::zeros(theta.shape());
          }
        }
        const double b1 = hp_.beta1, b2 = hp_.beta2, eps = hp_.eps_adam;
        const double t = static_cast<double>(step_count_);
        const double bc1 = 1.0 - std::pow(b1, t);
        const double bc2 = 1.0 - std::pow(b2, t);
        for (std::size_t i = 0; i < theta.size(); ++i) {
          const double ge = g[i] + wd * theta[i];
          st.m[i] = static_cast<T>(b1 * st.m[i] + (1 - b1) * ge);
          st.v[i] = static_cast<T>(b2 * st.v[i] + (1 - b2) * ge * ge);
          double vhat;
          if (kind_ == OptimKind::AdamAmsgrad) {
            if (st.v[i] > st.vmax[i]) st.vmax[i] = st.v[i];
            vhat = static_cast<double>(st.vmax[i]) / bc2;
          } else {
            vhat = static_cast<double>(st.v[i]) / bc2;
          }
          const double mhat = static_cast<double>(st.m[i]) / bc1;
          theta[i] = static_cast<T>(theta[i] - lr * mhat / (std::sqrt(vhat) + eps));
        }
        break;
      }
    }

    if (kind_ == OptimKind::Asgd && step_count_ > hp_.asgd_t0) {
      // running arithmetic mean of post-step parameters from step t0
      auto& avg = state_[name].avg;
      const double n = static_cast<double>(avg_samples_);
      for (std::size_t i = 0; i < theta.size(); ++i) {
        avg[i] = static_cast<T>(avg[i] + (theta[i] - avg[i]) / n);
      }
    }
  }

  OptimKind kind_ = OptimKind::Sgd;
  HyperParams hp_;
  std::uint64_t step_count_ = 0;
  std::uint64_t avg_samples_ = 0;
  std::map<std::string, ParamState> state_;
  std::map<std::string, Tensor<T>> stash_;
  bool swapped_ = false;
};

}  // namespace fer
