#include <doctest.h>

#include <array>
#include <cmath>
#include <vector>

#include "fer/optim.hpp"
#include "fer/tensor.hpp"

using fer::GradMap;
using fer::HyperParams;
using fer::Optimizer;
using fer::OptimKind;
using fer::ParamRefs;
using fer::Tensor;

namespace {

constexpr std::size_t kDim = 5;

// ---------------------------------------------------------------------------
// Independent straight-line scalar reimplementation of each update rule,
// run on the 5-parameter quadratic f(theta) = 0.5 * ||theta - c||^2
// (gradient theta - c). Deliberately written without any shared code.
// ---------------------------------------------------------------------------

struct OracleState {
  std::array<double, kDim> theta{};
  std::array<double, kDim> vel{};
  std::array<double, kDim> m{};
  std::array<double, kDim> v{};
  std::array<double, kDim> vmax{};
  std::array<double, kDim> acc_g2{};
  std::array<double, kDim> acc_dx2{};
  std::array<double, kDim> avg{};
  std::uint64_t t = 0;
  std::uint64_t n_avg = 0;
};

void oracle_step(OptimKind kind, const HyperParams& hp, OracleState& s,
                 const std::array<double, kDim>& target) {
  s.t += 1;
  if (kind == OptimKind::Asgd && s.t > hp.asgd_t0) s.n_avg += 1;
  for (std::size_t i = 0; i < kDim; ++i) {
    const double g = (s.theta[i] - target[i]) + hp.weight_decay * s.theta[i];
    switch (kind) {
      case OptimKind::Sgd:
        s.vel[i] = hp.momentum * s.vel[i] + g;
        s.theta[i] -= hp.lr * s.vel[i];
        break;
      case OptimKind::SgdNesterov:
        s.vel[i] = hp.momentum * s.vel[i] + g;
        s.theta[i] -= hp.lr * (g + hp.momentum * s.vel[i]);
        break;
      case OptimKind::Asgd:
        s.vel[i] = hp.momentum * s.vel[i] + g;
        s.theta[i] -= hp.lr * s.vel[i];
        break;
      case OptimKind::Adagrad:
        s.acc_g2[i] += g * g;
        s.theta[i] -= hp.lr * g / (std::sqrt(s.acc_g2[i]) + hp.eps_adagrad);
        break;
      case OptimKind::Adadelta: {
        s.acc_g2[i] = hp.rho * s.acc_g2[i] + (1 - hp.rho) * g * g;
        const double dx = -std::sqrt((s.acc_dx2[i] + hp.eps_adadelta) /
                                     (s.acc_g2[i] + hp.eps_adadelta)) *
                          g;
        s.acc_dx2[i] = hp.rho * s.acc_dx2[i] + (1 - hp.rho) * dx * dx;
        s.theta[i] += hp.lr * dx;
        break;
      }
      case OptimKind::Adam: {
        s.m[i] = hp.beta1 * s.m[i] + (1 - hp.beta1) * g;
        s.v[i] = hp.beta2 * s.v[i] + (1 - hp.beta2) * g * g;
        const double mhat = s.m[i] / (1 - std::pow(hp.beta1, double(s.t)));
        const double vhat = s.v[i] / (1 - std::pow(hp.beta2, double(s.t)));
        s.theta[i] -= hp.lr * mhat / (std::sqrt(vhat) + hp.eps_adam);
        break;
      }
      case OptimKind::AdamAmsgrad: {
        s.m[i] = hp.beta1 * s.m[i] + (1 - hp.beta1) * g;
        s.v[i] = hp.beta2 * s.v[i] + (1 - hp.beta2) * g * g;
        if (s.v[i] > s.vmax[i]) s.vmax[i] = s.v[i];
        const double mhat = s.m[i] / (1 - std::pow(hp.beta1, double(s.t)));
        const double vhat = s.vmax[i] / (1 - std::pow(hp.beta2, double(s.t)));
        s.theta[i] -= hp.lr * mhat / (std::sqrt(vhat) + hp.eps_adam);
        break;
      }
    }
  }
  if (kind == OptimKind::Asgd && s.t > hp.asgd_t0) {
    for (std::size_t i = 0; i < kDim; ++i) {
      s.avg[i] += (s.theta[i] - s.avg[i]) / double(s.n_avg);
    }
  }
}

struct Harness {
  Tensor<double> theta;
  ParamRefs<double> params;
  explicit Harness(const std::array<double, kDim>& init)
      : theta({kDim}) {
    for (std::size_t i = 0; i < kDim; ++i) theta[i] = init[i];
    params.emplace_back("theta", &theta);
  }
  GradMap<double> quad_grads(const std::array<double, kDim>& target) const {
    Tensor<double> g({kDim});
    for (std::size_t i = 0; i < kDim; ++i) g[i] = theta[i] - target[i];
    GradMap<double> m;
    m["theta"] = g;
    return m;
  }
};

const std::array<double, kDim> kInit{1.5, -2.0, 0.3, 4.0, -0.7};
const std::array<double, kDim> kTarget{0.2, 1.0, -1.0, 2.5, 0.0};

void check_oracle(OptimKind kind, const HyperParams& hp) {
  Harness h(kInit);
  Optimizer<double> opt(kind, hp);
  OracleState s;
  s.theta = kInit;
  for (int step = 0; step < 100; ++step) {
    opt.step(h.params, h.quad_grads(kTarget));
    oracle_step(kind, hp, s, kTarget);
  }
  for (std::size_t i = 0; i < kDim; ++i) {
    CHECK(std::abs(h.theta[i] - s.theta[i]) <= 1e-10);
  }
  CHECK(opt.step_count() == 100);
}

const std::vector<OptimKind> kAllKinds{
    OptimKind::Sgd,        OptimKind::SgdNesterov, OptimKind::Asgd,
    OptimKind::Adam,       OptimKind::AdamAmsgrad, OptimKind::Adadelta,
    OptimKind::Adagrad};

}  // namespace

TEST_CASE("oracle equivalence: 100 steps on the 5-parameter quadratic") {
  HyperParams hp;
  hp.lr = 0.05;
  hp.momentum = 0.9;
  hp.weight_decay = 1e-4;
  for (auto kind : kAllKinds) {
    CAPTURE(fer::optim_kind_name(kind));
    check_oracle(kind, hp);
  }
}

TEST_CASE("oracle equivalence: weight decay disabled (textbook forms)") {
  HyperParams hp;
  hp.lr = 0.02;
  hp.momentum = 0.9;
  hp.weight_decay = 0.0;
  for (auto kind : kAllKinds) {
    CAPTURE(fer::optim_kind_name(kind));
    check_oracle(kind, hp);
  }
}

TEST_CASE("sgd: hand-computed two-step trajectory") {
  Tensor<double> theta({1}, 1.0);
  ParamRefs<double> params{{"theta", &theta}};
  HyperParams hp;
  hp.lr = 0.1;
  hp.momentum = 0.9;
  hp.weight_decay = 0.0;
  Optimizer<double> opt(OptimKind::Sgd, hp);

  GradMap<double> g;
  g["theta"] = Tensor<double>({1}, 1.0);
  opt.step(params, g);
  CHECK(theta[0] == doctest::Approx(0.9).epsilon(1e-12));   // v=1
  opt.step(params, g);
  CHECK(theta[0] == doctest::Approx(0.71).epsilon(1e-12));  // v=1.9
}

TEST_CASE("adagrad: single-step closed form") {
  Tensor<double> theta({1}, 1.0);
  ParamRefs<double> params{{"theta", &theta}};
  HyperParams hp;
  hp.lr = 0.1;
  hp.weight_decay = 0.0;
  hp.eps_adagrad = 1e-10;
  Optimizer<double> opt(OptimKind::Adagrad, hp);
  GradMap<double> g;
  g["theta"] = Tensor<double>({1}, 2.0);
  opt.step(params, g);
  CHECK(theta[0] == doctest::Approx(1.0 - 0.1 * 2.0 / (2.0 + 1e-10)).epsilon(1e-12));
}

TEST_CASE("adam: first-step update magnitude is about lr") {
  for (double gval : {0.5, -3.0, 100.0}) {
    Tensor<double> theta({1}, 0.0);
    ParamRefs<double> params{{"theta", &theta}};
    HyperParams hp;
    hp.lr = 0.01;
    hp.weight_decay = 0.0;
    Optimizer<double> opt(OptimKind::Adam, hp);
    GradMap<double> g;
    g["theta"] = Tensor<double>({1}, gval);
    opt.step(params, g);
    CHECK(std::abs(theta[0]) == doctest::Approx(0.01).epsilon(1e-4));
    CHECK(theta[0] * gval < 0);  // moves against the gradient sign
  }
}

TEST_CASE("all variants: zero gradient with zero weight decay is a no-op") {
  for (auto kind : kAllKinds) {
    CAPTURE(fer::optim_kind_name(kind));
    Tensor<double> theta({3}, {std::vector<double>{1.0, -2.0, 0.5}});
    ParamRefs<double> params{{"theta", &theta}};
    HyperParams hp;
    hp.weight_decay = 0.0;
    Optimizer<double> opt(kind, hp);
    GradMap<double> g;
    g["theta"] = Tensor<double>::zeros({3});
    opt.step(params, g);
    CHECK(theta[0] == 1.0);
    CHECK(theta[1] == -2.0);
    CHECK(theta[2] == 0.5);
  }
}

TEST_CASE("plain sgd without momentum: lr=2a equals two fixed-gradient lr=a steps") {
  HyperParams once;
  once.lr = 0.2;
  once.momentum = 0.0;
  once.weight_decay = 0.0;
  HyperParams twice = once;
  twice.lr = 0.1;

  Tensor<double> ta({2}, {std::vector<double>{1.0, -1.0}});
  Tensor<double> tb = ta;
  ParamRefs<double> pa{{"t", &ta}};
  ParamRefs<double> pb{{"t", &tb}};
  GradMap<double> g;
  g["t"] = Tensor<double>({2}, {std::vector<double>{0.3, 0.7}});

  Optimizer<double> oa(OptimKind::Sgd, once);
  oa.step(pa, g);
  Optimizer<double> ob(OptimKind::Sgd, twice);
  ob.step(pb, g);
  ob.step(pb, g);
  CHECK(ta[0] == doctest::Approx(tb[0]).epsilon(1e-15));
  CHECK(ta[1] == doctest::Approx(tb[1]).epsilon(1e-15));
}

TEST_CASE("registry validation and non-finite gradients") {
  Tensor<double> theta({2});
  ParamRefs<double> params{{"theta", &theta}};
  Optimizer<double> opt(OptimKind::Sgd, HyperParams{});

  GradMap<double> missing;
  CHECK_THROWS_AS(opt.step(params, missing), fer::RegistryError);

  GradMap<double> extra;
  extra["theta"] = Tensor<double>::zeros({2});
  extra["ghost"] = Tensor<double>::zeros({2});
  CHECK_THROWS_AS(opt.step(params, extra), fer::RegistryError);

  GradMap<double> wrong_name;
  wrong_name["thetb"] = Tensor<double>::zeros({2});
  CHECK_THROWS_AS(opt.step(params, wrong_name), fer::RegistryError);

  GradMap<double> inf_grad;
  inf_grad["theta"] =
      Tensor<double>({2}, {std::vector<double>{1.0, INFINITY}});
  CHECK_THROWS_AS(opt.step(params, inf_grad), fer::NumericError);
}

TEST_CASE("asgd: averaging semantics") {
  HyperParams hp;
  hp.lr = 0.1;
  hp.momentum = 0.0;
  hp.weight_decay = 0.0;

  SUBCASE("after one step the average equals the post-step parameters") {
    Tensor<double> theta({1}, 1.0);
    ParamRefs<double> params{{"theta", &theta}};
    Optimizer<double> opt(OptimKind::Asgd, hp);
    GradMap<double> g;
    g["theta"] = Tensor<double>({1}, 1.0);
    opt.step(params, g);
    const double post = theta[0];
    opt.swap_in_average(params);
    CHECK(theta[0] == post);
    opt.swap_out_average(params);
    CHECK(theta[0] == post);
  }

  SUBCASE("post-step values 1.0, 0.8, 0.6 average to 0.8 from t0=0") {
    // gradient 2 at lr 0.1 moves theta down by 0.2 per step from 1.2
    Tensor<double> theta({1}, 1.2);
    ParamRefs<double> params{{"theta", &theta}};
    Optimizer<double> opt(OptimKind::Asgd, hp);
    GradMap<double> g;
    g["theta"] = Tensor<double>({1}, 2.0);
    for (int i = 0; i < 3; ++i) opt.step(params, g);
    CHECK(theta[0] == doctest::Approx(0.6).epsilon(1e-12));
    opt.swap_in_average(params);
    CHECK(theta[0] == doctest::Approx(0.8).epsilon(1e-12));
    opt.swap_out_average(params);
    CHECK(theta[0] == doctest::Approx(0.6).epsilon(1e-12));
  }

  SUBCASE("t0 beyond the current step leaves the average at current theta") {
    HyperParams late = hp;
    late.asgd_t0 = 100;
    Tensor<double> theta({1}, 1.0);
    ParamRefs<double> params{{"theta", &theta}};
    Optimizer<double> opt(OptimKind::Asgd, late);
    GradMap<double> g;
    g["theta"] = Tensor<double>({1}, 1.0);
    opt.step(params, g);
    const double current = theta[0];
    opt.swap_in_average(params);
    CHECK(theta[0] == current);
    opt.swap_out_average(params);
  }

  SUBCASE("averaging from a non-ASGD optimizer is a state error") {
    Tensor<double> theta({1}, 1.0);
    ParamRefs<double> params{{"theta", &theta}};
    Optimizer<double> opt(OptimKind::Adam, HyperParams{});
    CHECK_THROWS_AS(opt.swap_in_average(params), fer::StateError);
  }
}

TEST_CASE("amsgrad: second-moment max is monotone") {
  Tensor<double> theta({1}, 1.0);
  ParamRefs<double> params{{"theta", &theta}};
  HyperParams hp;
  hp.weight_decay = 0.0;
  Optimizer<double> a(OptimKind::Adam, hp);
  Optimizer<double> b(OptimKind::AdamAmsgrad, hp);
  Tensor<double> tb = theta;
  ParamRefs<double> pb{{"theta", &tb}};

  // large gradient then tiny gradients: AMSGrad keeps the large second
  // moment, so its later steps are smaller in magnitude than Adam's
  auto grad = [](double v) {
    GradMap<double> g;
    g["theta"] = Tensor<double>({1}, v);
    return g;
  };
  a.step(params, grad(10.0));
  b.step(pb, grad(10.0));
  double prev_a = theta[0], prev_b = tb[0];
  for (int i = 0; i < 20; ++i) {
    a.step(params, grad(0.01));
    b.step(pb, grad(0.01));
  }
  const double adam_move = std::abs(theta[0] - prev_a);
  const double ams_move = std::abs(tb[0] - prev_b);
  CHECK(ams_move < adam_move);
}
