#include <random>

#include "doctest.h"
#include "rnmpc/feasibility_oracle.hpp"
#include "rnmpc/models.hpp"
#include "rnmpc/riccati.hpp"
#include "rnmpc/scp.hpp"

using namespace rnmpc;

namespace {

struct ScalarRig {
  std::unique_ptr<ScalarQuadraticModel> model;
  ErrorBoundParams err;
  std::unique_ptr<ConstraintSet> C;
  Mat Q, R;
  TerminalIngredients ti;
  std::unique_ptr<RmpcController> ctrl;
};

ScalarRig make_rig(int T = 8) {
  ScalarRig r;
  r.model = std::make_unique<ScalarQuadraticModel>();
  r.err.mu = Vec::Constant(1, r.model->dt());
  r.C = std::make_unique<ConstraintSet>(
      ConstraintSet::box(Vec::Constant(1, 1.0), Vec::Constant(1, 1.0)));
  r.Q = Mat::Identity(1, 1);
  r.R = 0.1 * Mat::Identity(1, 1);
  r.ti = synth_terminal(*r.model, r.Q, r.R, r.err, *r.C);
  ControllerConfig cfg;
  cfg.horizon = T;
  r.ctrl = std::make_unique<RmpcController>(*r.model, r.err, *r.C, r.ti, r.Q, r.R, cfg);
  return r;
}

}  // namespace

TEST_CASE("equivalent disturbance: prediction hit, boundary and overflow") {
  auto rig = make_rig();
  auto res = rig.ctrl->solve(Vec::Constant(1, 0.3));
  REQUIRE(res.feasible);
  const Plan& plan = res.plan;

  Vec pred = plan.z[1] + plan.psi_x[1];
  CHECK(inf_norm(equivalent_disturbance(plan, pred, *rig.model, rig.err)) < 1e-12);

  Vec sig = sigma(rig.err, *rig.model, plan.z[0], plan.v[0], plan.tau(0));
  Vec w1 = equivalent_disturbance(plan, Vec(pred + sig), *rig.model, rig.err);
  CHECK(w1(0) == doctest::Approx(1.0));

  CHECK_THROWS_WITH_AS(equivalent_disturbance(plan, Vec(pred + 1.5 * sig), *rig.model, rig.err),
                       doctest::Contains("outside certified tube"), std::runtime_error);
}

TEST_CASE("equivalent disturbance stays inside the unit ball on the validated model") {
  auto rig = make_rig();
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  int trials = 0;
  for (int ep = 0; ep < 40; ++ep) {
    Vec x = Vec::Constant(1, 0.6 * unif(rng));
    rig.ctrl->reset();
    auto res = rig.ctrl->solve(x);
    if (!res.feasible) continue;
    for (int t = 0; t < 25; ++t) {
      Vec w = Vec::Constant(1, unif(rng));
      Vec x_next = step(*rig.model, x, res.u, w);
      Vec wb = equivalent_disturbance(res.plan, x_next, *rig.model, rig.err);
      CHECK(inf_norm(wb) <= 1.0 + 1e-9);
      ++trials;
      x = x_next;
      res = rig.ctrl->solve(x);
      if (!res.feasible) break;
    }
  }
  CHECK(trials >= 1000);
}

TEST_CASE("candidate blocks match the hand-shifted values on a T=2 instance") {
  // the same fixture as the warm-start shift, but anchored to a realized state
  TerminalIngredients ti;
  ti.Xf_rows = Mat(2, 1);
  ti.Xf_rows << 1.0, -1.0;
  ti.Xf_offsets = Vec::Constant(2, -0.2);
  ti.K_f = Mat::Constant(1, 1, -0.4);
  ti.A_cl = Mat::Constant(1, 1, 0.5);
  ti.sigma_f = Vec::Constant(1, 0.07);
  ti.tau_f = 0.21;
  ti.P = Mat::Identity(1, 1);

  LinearModel m("lti", Mat::Ones(1, 1), Mat::Ones(1, 1), 0.1 * Mat::Identity(1, 1));
  ErrorBoundParams err;
  err.mu = Vec::Zero(1);

  Plan prev = Plan::zero(2, 1, 1);
  prev.z[1] << 2.0;
  prev.psi_x[1] << 0.2;
  prev.psi_x[2] << 0.3;
  prev.psi_u[1] << 0.5;
  prev.Phi.phi_x(1, 0) = Mat::Constant(1, 1, 0.1);  // = sigma(tau_0), mu = 0
  prev.Phi.phi_x(2, 0) = Mat::Constant(1, 1, 0.12);
  prev.Phi.phi_x(2, 1) = Mat::Constant(1, 1, 0.1);
  prev.Phi.phi_u(1, 0) = Mat::Constant(1, 1, 0.14);
  prev.tau << 0.3, 0.4;

  // realized state half a sigma above the prediction: w_bar = 0.5
  Vec x_next = Vec::Constant(1, 2.0 + 0.2 + 0.05);
  auto cand = build_candidate(prev, x_next, ti, m, err);
  CHECK(cand.w_bar(0) == doctest::Approx(0.5));
  // psi_bar_0 = x_next - z_1
  CHECK(cand.plan.psi_x[0](0) == doctest::Approx(0.25));
  // psi_bar_1^x = psi_2 + Phi_x[2][0] w = 0.3 + 0.12*0.5
  CHECK(cand.plan.psi_x[1](0) == doctest::Approx(0.36));
  // psi_bar_0^u = psi_u_1 + Phi_u[1][0] w = 0.5 + 0.14*0.5
  CHECK(cand.plan.psi_u[0](0) == doctest::Approx(0.57));
  // terminal extension
  CHECK(cand.plan.psi_u[1](0) == doctest::Approx(-0.4 * 0.36));
  CHECK(cand.plan.psi_x[2](0) == doctest::Approx(0.5 * 0.36));
  // block shift: phi_x[1][0] = old phi_x[2][1], terminal rows via A_cl and K_f
  CHECK(cand.plan.Phi.phi_x(1, 0)(0, 0) == doctest::Approx(0.1));
  CHECK(cand.plan.Phi.phi_x(2, 0)(0, 0) == doctest::Approx(0.5 * 0.1));
  CHECK(cand.plan.Phi.phi_u(1, 0)(0, 0) == doctest::Approx(-0.4 * 0.1));
  CHECK(cand.plan.Phi.phi_x(2, 1)(0, 0) == doctest::Approx(0.07));
  CHECK(cand.plan.tau(0) == doctest::Approx(0.4));
  CHECK(cand.plan.tau(1) == doctest::Approx(0.21));
}

TEST_CASE("candidate feasibility replay over disturbed closed-loop steps") {
  auto rig = make_rig();
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  int checked = 0;
  for (int ep = 0; ep < 8; ++ep) {
    Vec x = Vec::Constant(1, 0.55 * unif(rng));
    rig.ctrl->reset();
    auto res = rig.ctrl->solve(x);
    if (!res.feasible) continue;
    for (int t = 0; t < 20; ++t) {
      // alternate uniform and vertex disturbances
      Vec w = Vec::Constant(1, (t % 2 == 0) ? unif(rng) : (unif(rng) > 0 ? 1.0 : -1.0));
      Vec x_next = step(*rig.model, x, res.u, w);
      auto cand = build_candidate(res.plan, x_next, rig.ti, *rig.model, rig.err);
      auto rep = check_candidate(cand, *rig.model, rig.err, *rig.C, rig.ti);
      CHECK(rep.w_bar_norm <= 1.0 + 1e-9);
      CHECK(rep.worst_margin <= 1e-6);
      CHECK(rep.plan_check.phi_recursion_residual <= 1e-8);
      CHECK(rep.plan_check.psi_dynamics_residual <= 1e-8);
      CHECK(rep.ok);
      ++checked;
      x = x_next;
      res = rig.ctrl->solve(x);
      REQUIRE(res.feasible);
    }
  }
  CHECK(checked >= 100);
}

TEST_CASE("superposition and set-inclusion identities of the shifted candidate") {
  auto rig = make_rig();
  auto res = rig.ctrl->solve(Vec::Constant(1, 0.45));
  REQUIRE(res.feasible);
  const Plan& plan = res.plan;
  Vec x_next = step(*rig.model, Vec::Constant(1, 0.45), res.u, Vec::Constant(1, 0.8));
  auto cand = build_candidate(plan, x_next, rig.ti, *rig.model, rig.err);

  const int T = plan.horizon();
  for (int k = 1; k <= T - 1; ++k) {
    auto lin = rig.model->jacobians(plan.z[k], plan.v[k]);
    Vec lhs = plan.Phi.phi_x(k + 1, 0) * cand.w_bar;
    Vec rhs = lin.A * (plan.Phi.phi_x(k, 0) * cand.w_bar) +
              lin.B * (plan.Phi.phi_u(k, 0) * cand.w_bar);
    CHECK(inf_norm(Vec(lhs - rhs)) <= 1e-8);
  }
  for (int k = 0; k <= T - 1; ++k) {
    Vec diff = cand.plan.psi_x[k] - plan.psi_x[k + 1];
    Vec bound = plan.Phi.phi_x(k + 1, 0).cwiseAbs().rowwise().sum();
    for (int r = 0; r < diff.size(); ++r) CHECK(std::abs(diff(r)) <= bound(r) + 1e-12);
  }
}

TEST_CASE("zero-disturbance candidate matches a fresh solve on a linear system") {
  auto m = make_double_integrator(0.1, 0.005);
  ErrorBoundParams err;
  err.mu = Vec::Zero(2);
  auto C = ConstraintSet::box(Vec::Constant(2, 2.0), Vec::Constant(1, 4.0));
  Mat Q = Mat::Identity(2, 2), R = Mat::Identity(1, 1);
  auto ti = synth_terminal(*m, Q, R, err, C);
  ControllerConfig cfg;
  cfg.horizon = 10;
  RmpcController ctrl(*m, err, C, ti, Q, R, cfg);

  Vec x(2);
  x << 0.05, -0.02;
  auto res = ctrl.solve(x);
  REQUIRE(res.feasible);
  Vec x_next = step(*m, x, res.u, Vec::Zero(2));
  auto cand = build_candidate(res.plan, x_next, ti, *m, err);

  RmpcController fresh(*m, err, C, ti, Q, R, cfg);
  auto res2 = fresh.solve(x_next);
  REQUIRE(res2.feasible);

  auto cost_of = [&](const Plan& p) {
    double J = 0.0;
    for (int k = 0; k < p.horizon(); ++k) {
      Vec xs = p.z[k] + p.psi_x[k];
      Vec us = p.v[k] + p.psi_u[k];
      J += xs.dot(Q * xs) + us.dot(R * us);
    }
    Vec xT = p.z[p.horizon()] + p.psi_x[p.horizon()];
    return J + xT.dot(ti.P * xT);
  };
  // the candidate is suboptimal by at most the solver tolerance here
  CHECK(cost_of(cand.plan) >= cost_of(res2.plan) - 1e-7);
  CHECK(cost_of(cand.plan) <= cost_of(res2.plan) + 1e-4 * (1.0 + cost_of(res2.plan)));
}

TEST_CASE("check_candidate rejects a tampered tau") {
  auto rig = make_rig();
  auto res = rig.ctrl->solve(Vec::Constant(1, 0.4));
  REQUIRE(res.feasible);
  Vec x_next = step(*rig.model, Vec::Constant(1, 0.4), res.u, Vec::Constant(1, 0.3));
  auto cand = build_candidate(res.plan, x_next, rig.ti, *rig.model, rig.err);
  cand.plan.tau *= 0.5;
  auto rep = check_candidate(cand, *rig.model, rig.err, *rig.C, rig.ti);
  CHECK_FALSE(rep.ok);
}

TEST_CASE("ISS bookkeeping: nominal decrease and the local upper bound") {
  auto m = make_double_integrator(0.1, 0.005);
  ErrorBoundParams err;
  err.mu = Vec::Zero(2);
  auto C = ConstraintSet::box(Vec::Constant(2, 2.0), Vec::Constant(1, 4.0));
  Mat Q = Mat::Identity(2, 2), R = Mat::Identity(1, 1);
  auto ti = synth_terminal(*m, Q, R, err, C);
  ControllerConfig cfg;
  cfg.horizon = 10;
  RmpcController ctrl(*m, err, C, ti, Q, R, cfg);

  Vec x(2);
  x << 0.4, 0.1;
  double V_prev = 0.0;
  Vec x_prev = x;
  for (int t = 0; t < 30; ++t) {
    auto res = ctrl.solve(x);
    REQUIRE(res.feasible);
    if (t > 0 && V_prev > 1e-16) {
      CHECK(res.objective < V_prev);  // strict decrease without disturbance
      auto rep = iss_decrease(V_prev, res.objective, x_prev, Vec::Zero(2), Q, 0.0);
      CHECK(rep.decrease_ok);
    }
    if (ti.xf().contains(x, 0.0)) {
      CHECK(res.objective <= x.dot(ti.P * x) + 1e-6);
    }
    V_prev = res.objective;
    x_prev = x;
    x = step(*m, x, res.u, Vec::Zero(2));
  }
  CHECK(inf_norm(x) < 1e-3);
}
