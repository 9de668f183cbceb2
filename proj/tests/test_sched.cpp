#include <doctest.h>

#include <cmath>
#include <vector>

#include "fer/sched.hpp"

using fer::SchedConfig;
using fer::SchedKind;
using fer::Scheduler;

namespace {

constexpr double kPi = 3.14159265358979323846;

// Independent one-line formula evaluations used as oracles.
double cosine_formula(double mx, double mn, int e, int t_max) {
  return mn + 0.5 * (mx - mn) * (1.0 + std::cos(kPi * double(e) / double(t_max)));
}

double step_formula(double lr0, double gamma, int e, int s) {
  return lr0 * std::pow(gamma, e / s);
}

double wr_formula(double mx, double mn, int e, int t0, int t_mult) {
  int start = 0, len = t0;
  while (e >= start + len) {
    start += len;
    if (t_mult > 1) len *= t_mult;
  }
  return mn + 0.5 * (mx - mn) * (1.0 + std::cos(kPi * double(e - start) / double(len)));
}

double one_cycle_formula(double max_lr, double pct, double div, double fdiv,
                         int e, int total) {
  const double start = max_lr / div, fin = max_lr / fdiv;
  int up = int(std::llround(pct * total));
  if (up > total - 1) up = total - 1;
  if (up < 1) up = 1;
  if (e <= up) return start + (max_lr - start) * double(e) / double(up);
  const double pos = double(e - up) / double(total - 1 - up);
  return fin + (max_lr - fin) * 0.5 * (1.0 + std::cos(kPi * pos));
}

}  // namespace

TEST_CASE("cosine: endpoints and midpoint") {
  SchedConfig cfg;
  cfg.kind = SchedKind::Cosine;
  cfg.lr0 = 0.01;
  cfg.eta_min = 0.0;
  cfg.cosine_t_max = 300;
  Scheduler s(cfg);
  CHECK(s.lr_for_epoch(0) == doctest::Approx(0.01).epsilon(1e-15));
  CHECK(s.lr_for_epoch(150) == doctest::Approx(0.005).epsilon(1e-12));
}

TEST_CASE("cosine-wr: restart returns to eta_max") {
  SchedConfig cfg;
  cfg.kind = SchedKind::CosineWR;
  cfg.lr0 = 0.01;
  cfg.wr_t0 = 10;
  cfg.wr_t_mult = 2;
  Scheduler s(cfg);
  CHECK(s.lr_for_epoch(10) == doctest::Approx(0.01).epsilon(1e-15));
  CHECK(s.is_restart_epoch(10));
  CHECK_FALSE(s.is_restart_epoch(0));
  CHECK_FALSE(s.is_restart_epoch(11));
  // second cycle has length 20, so the next restart is at 30
  CHECK(s.is_restart_epoch(30));
  CHECK(s.lr_for_epoch(30) == doctest::Approx(0.01).epsilon(1e-15));
}

TEST_CASE("step decay: boundary epochs") {
  SchedConfig cfg;
  cfg.kind = SchedKind::StepLr;
  cfg.lr0 = 0.01;
  cfg.step_size = 30;
  cfg.step_gamma = 0.1;
  Scheduler s(cfg);
  CHECK(s.lr_for_epoch(0) == doctest::Approx(0.01));
  CHECK(s.lr_for_epoch(29) == doctest::Approx(0.01));
  CHECK(s.lr_for_epoch(30) == doctest::Approx(0.001).epsilon(1e-12));
  CHECK(s.lr_for_epoch(60) == doctest::Approx(0.0001).epsilon(1e-12));
}

TEST_CASE("300-epoch sequences match the independent formulas to 1e-12") {
  const int horizon = 300;

  SchedConfig c1;
  c1.kind = SchedKind::Constant;
  c1.lr0 = 0.01;
  Scheduler constant(c1);

  SchedConfig c2;
  c2.kind = SchedKind::StepLr;
  c2.lr0 = 0.01;
  c2.step_size = 30;
  c2.step_gamma = 0.1;
  Scheduler step(c2);

  SchedConfig c3;
  c3.kind = SchedKind::Cosine;
  c3.lr0 = 0.01;
  c3.eta_min = 0.0;
  c3.cosine_t_max = horizon;
  Scheduler cosine(c3);

  SchedConfig c4;
  c4.kind = SchedKind::CosineWR;
  c4.lr0 = 0.01;
  c4.wr_t0 = 10;
  c4.wr_t_mult = 2;
  Scheduler wr(c4);

  SchedConfig c5;
  c5.kind = SchedKind::OneCycle;
  c5.oc_max_lr = 0.01;
  c5.oc_pct_start = 0.3;
  c5.oc_div = 25.0;
  c5.oc_final_div = 1e4;
  c5.oc_total = horizon;
  Scheduler one_cycle(c5);

  for (int e = 0; e < horizon; ++e) {
    CHECK(std::abs(constant.lr_for_epoch(e) - 0.01) <= 1e-12);
    CHECK(std::abs(step.lr_for_epoch(e) - step_formula(0.01, 0.1, e, 30)) <= 1e-12);
    CHECK(std::abs(cosine.lr_for_epoch(e) -
                   cosine_formula(0.01, 0.0, e, horizon)) <= 1e-12);
    CHECK(std::abs(wr.lr_for_epoch(e) - wr_formula(0.01, 0.0, e, 10, 2)) <= 1e-12);
    CHECK(std::abs(one_cycle.lr_for_epoch(e) -
                   one_cycle_formula(0.01, 0.3, 25.0, 1e4, e, horizon)) <= 1e-12);

    // every schedule stays strictly positive over the horizon
    CHECK(constant.lr_for_epoch(e) > 0);
    CHECK(step.lr_for_epoch(e) > 0);
    CHECK(cosine.lr_for_epoch(e) > 0);
    CHECK(wr.lr_for_epoch(e) > 0);
    CHECK(one_cycle.lr_for_epoch(e) > 0);
  }
}

TEST_CASE("cosine is non-increasing; warm restarts are non-increasing per cycle") {
  SchedConfig c;
  c.kind = SchedKind::Cosine;
  c.lr0 = 0.01;
  c.cosine_t_max = 300;
  Scheduler cosine(c);
  for (int e = 1; e <= 300; ++e) {
    CHECK(cosine.lr_for_epoch(e) <= cosine.lr_for_epoch(e - 1) + 1e-18);
  }

  SchedConfig w;
  w.kind = SchedKind::CosineWR;
  w.lr0 = 0.01;
  w.wr_t0 = 10;
  w.wr_t_mult = 2;
  Scheduler wr(w);
  for (int e = 1; e < 300; ++e) {
    if (!wr.is_restart_epoch(e)) {
      CHECK(wr.lr_for_epoch(e) <= wr.lr_for_epoch(e - 1) + 1e-18);
    } else {
      CHECK(wr.lr_for_epoch(e) == doctest::Approx(0.01).epsilon(1e-15));
    }
  }
}

TEST_CASE("one-cycle: exhaustion past the horizon") {
  SchedConfig c;
  c.kind = SchedKind::OneCycle;
  c.oc_total = 50;
  Scheduler s(c);
  CHECK_NOTHROW(s.lr_for_epoch(49));
  CHECK_THROWS_AS(s.lr_for_epoch(50), fer::ScheduleExhaustedError);
}

TEST_CASE("rlrp: strict improvement keeps the learning rate") {
  SchedConfig c;
  c.kind = SchedKind::Rlrp;
  c.lr0 = 0.01;
  Scheduler s(c);
  double acc = 0.50;
  for (int e = 0; e < 20; ++e) {
    CHECK(s.lr_for_epoch(e) == 0.01);
    s.observe(acc);
    acc += 0.01;
  }
  CHECK(s.current_lr() == 0.01);
}

TEST_CASE("rlrp: reduces by 0.75 exactly once after five flat epochs") {
  SchedConfig c;
  c.kind = SchedKind::Rlrp;
  c.lr0 = 0.01;
  Scheduler s(c);
  s.observe(0.60);  // establishes the best
  std::vector<double> lr_history;
  for (int i = 0; i < 5; ++i) {
    s.observe(0.60);  // not better than best by more than min_delta
    lr_history.push_back(s.current_lr());
  }
  CHECK(lr_history[0] == 0.01);
  CHECK(lr_history[3] == 0.01);
  CHECK(lr_history[4] == doctest::Approx(0.0075).epsilon(1e-15));

  // an improvement afterwards resets the window; no second cut
  s.observe(0.70);
  CHECK(s.current_lr() == doctest::Approx(0.0075).epsilon(1e-15));
}

TEST_CASE("rlrp: two consecutive plateau windows compound the factor") {
  SchedConfig c;
  c.kind = SchedKind::Rlrp;
  c.lr0 = 0.01;
  Scheduler s(c);
  s.observe(0.60);
  for (int i = 0; i < 10; ++i) s.observe(0.55);
  CHECK(s.current_lr() == doctest::Approx(0.005625).epsilon(1e-15));
}

TEST_CASE("rlrp: floor is reached within the predicted number of cuts") {
  SchedConfig c;
  c.kind = SchedKind::Rlrp;
  c.lr0 = 0.01;
  c.rlrp_min_lr = 1e-6;
  Scheduler s(c);
  const int cuts_needed =
      int(std::ceil(std::log(c.rlrp_min_lr / c.lr0) / std::log(c.rlrp_factor)));
  s.observe(0.9);
  for (int i = 0; i < cuts_needed * c.rlrp_patience; ++i) s.observe(0.1);
  CHECK(s.current_lr() == doctest::Approx(1e-6).epsilon(1e-12));
  // lr never dips below the floor
  for (int i = 0; i < 10; ++i) s.observe(0.1);
  CHECK(s.current_lr() >= 1e-6);
}

TEST_CASE("rlrp: non-finite metric is a numeric error") {
  SchedConfig c;
  c.kind = SchedKind::Rlrp;
  Scheduler s(c);
  CHECK_THROWS_AS(s.observe(std::nan("")), fer::NumericError);
}
