#include <random>

#include "doctest.h"
#include "rnmpc/feasibility_oracle.hpp"
#include "rnmpc/models.hpp"
#include "rnmpc/riccati.hpp"
#include "rnmpc/scp.hpp"

using namespace rnmpc;

namespace {

struct ScalarSetup {
  std::unique_ptr<ScalarQuadraticModel> model;
  ErrorBoundParams err;
  std::unique_ptr<ConstraintSet> C;
  Mat Q, R;
  TerminalIngredients ti;
};

ScalarSetup scalar_setup() {
  ScalarSetup s;
  s.model = std::make_unique<ScalarQuadraticModel>();
  s.err.mu = Vec::Constant(1, s.model->dt());
  s.C = std::make_unique<ConstraintSet>(
      ConstraintSet::box(Vec::Constant(1, 1.0), Vec::Constant(1, 1.0)));
  s.Q = Mat::Identity(1, 1);
  s.R = 0.1 * Mat::Identity(1, 1);
  s.ti = synth_terminal(*s.model, s.Q, s.R, s.err, *s.C);
  return s;
}

ControllerConfig scalar_config(int T = 8) {
  ControllerConfig cfg;
  cfg.horizon = T;
  cfg.sub.qp.eps_abs = 1e-9;
  cfg.sub.qp.eps_rel = 1e-9;
  return cfg;
}

}  // namespace

TEST_CASE("origin is a fixed point: zero state gives zero input and cost") {
  auto s = scalar_setup();
  RmpcController ctrl(*s.model, s.err, *s.C, s.ti, s.Q, s.R, scalar_config());
  auto res = ctrl.solve(Vec::Zero(1));
  REQUIRE(res.feasible);
  CHECK(std::abs(res.u(0)) < 1e-6);
  CHECK(res.objective < 1e-10);
}

TEST_CASE("inside the terminal set the controller reproduces the LQR gain") {
  // linear double integrator, small disturbance
  auto m = make_double_integrator(0.1, 0.005);
  ErrorBoundParams err;
  err.mu = Vec::Zero(2);
  auto C = ConstraintSet::box(Vec::Constant(2, 2.0), Vec::Constant(1, 4.0));
  Mat Q = Mat::Identity(2, 2), R = Mat::Identity(1, 1);
  auto ti = synth_terminal(*m, Q, R, err, C);

  ControllerConfig cfg;
  cfg.horizon = 10;
  RmpcController ctrl(*m, err, C, ti, Q, R, cfg);

  auto lin = m->jacobians(Vec::Zero(2), Vec::Zero(1));
  auto lqr = dare(lin.A, lin.B, Q, R);

  // a state well inside X_f, so no constraint is active
  Polytope xf = ti.xf();
  Vec x(2);
  x << 0.2 * xf.support((Vec(2) << 1, 0).finished()),
      -0.2 * xf.support((Vec(2) << 0, 1).finished());
  REQUIRE(xf.contains(x, 0.0));

  auto res = ctrl.solve(x);
  REQUIRE(res.feasible);
  Vec u_expect = lqr.K * x;
  CHECK(std::abs(res.u(0) - u_expect(0)) < 2e-4 * (1.0 + std::abs(u_expect(0))));
}

TEST_CASE("shift_warm_start matches hand-shifted blocks on a T=2 scalar plan") {
  TerminalIngredients ti;
  ti.Xf_rows = Mat(2, 1);
  ti.Xf_rows << 1.0, -1.0;
  ti.Xf_offsets = Vec::Constant(2, -0.2);
  ti.K_f = Mat::Constant(1, 1, -0.4);
  ti.A_cl = Mat::Constant(1, 1, 0.5);
  ti.sigma_f = Vec::Constant(1, 0.07);
  ti.tau_f = 0.21;
  ti.P = Mat::Identity(1, 1);

  Plan prev = Plan::zero(2, 1, 1);
  prev.z[0] << 1.0;
  prev.z[1] << 2.0;
  prev.z[2] << 0.0;
  prev.v[0] << 3.0;
  prev.v[1] << 4.0;
  prev.psi_x[0] << 0.1;
  prev.psi_x[1] << 0.2;
  prev.psi_x[2] << 0.3;
  prev.psi_u[0] << 0.4;
  prev.psi_u[1] << 0.5;
  prev.Phi.phi_x(1, 0) = Mat::Constant(1, 1, 0.11);
  prev.Phi.phi_x(2, 0) = Mat::Constant(1, 1, 0.12);
  prev.Phi.phi_x(2, 1) = Mat::Constant(1, 1, 0.13);
  prev.Phi.phi_u(1, 0) = Mat::Constant(1, 1, 0.14);
  prev.tau << 0.3, 0.4;
  prev.tau_T = 0.6;

  Plan c = shift_warm_start(prev, ti);
  // nominal: (z1, z2, 0), (v1, 0)
  CHECK(c.z[0](0) == 2.0);
  CHECK(c.z[1](0) == 0.0);
  CHECK(c.z[2](0) == 0.0);
  CHECK(c.v[0](0) == 4.0);
  CHECK(c.v[1](0) == 0.0);
  // psi: naive shift then the terminal controller
  CHECK(c.psi_x[0](0) == 0.2);
  CHECK(c.psi_x[1](0) == 0.3);
  CHECK(c.psi_u[0](0) == 0.5);
  CHECK(c.psi_u[1](0) == doctest::Approx(-0.4 * 0.3));
  CHECK(c.psi_x[2](0) == doctest::Approx(0.5 * 0.3));
  // blocks: lateral shift, closed-loop terminal row, Sigma_f sub-diagonal
  CHECK(c.Phi.phi_x(1, 0)(0, 0) == doctest::Approx(0.13));
  CHECK(c.Phi.phi_x(2, 0)(0, 0) == doctest::Approx(0.5 * 0.13));
  CHECK(c.Phi.phi_x(2, 1)(0, 0) == doctest::Approx(0.07));
  CHECK(c.Phi.phi_u(1, 0)(0, 0) == doctest::Approx(-0.4 * 0.13));
  // tau shift with tau_f appended
  CHECK(c.tau(0) == doctest::Approx(0.4));
  CHECK(c.tau(1) == doctest::Approx(0.6));
  REQUIRE(c.tau_T.has_value());
  CHECK(*c.tau_T == doctest::Approx(0.21));

  SUBCASE("all-zero plan shifts to all-zero") {
    Plan zeroed = Plan::zero(2, 1, 1);
    Plan cz = shift_warm_start(zeroed, ti);
    CHECK(inf_norm(cz.z[0]) == 0.0);
    CHECK(inf_norm(cz.psi_x[2]) == 0.0);
    CHECK(cz.Phi.phi_u(1, 0)(0, 0) == 0.0);
    // the appended sub-diagonal is Sigma_f by construction
    CHECK(cz.Phi.phi_x(2, 1)(0, 0) == doctest::Approx(0.07));
  }
}

TEST_CASE("cart-pole horizon-10 solve yields a feasible certified plan") {
  CartPoleParams p;
  p.e_scale = 1e-6;
  CartPoleModel m(p);
  auto C = ConstraintSet::box((Vec(4) << 1.0, 1.0, 0.15, 1.0).finished(), Vec::Constant(1, 8.0));
  auto err = estimate_curvature(m, C, 60, 12);
  Mat Q = Mat::Identity(4, 4), R = 0.3 * Mat::Identity(1, 1);
  auto ti = synth_terminal(m, Q, R, err, C);

  ControllerConfig cfg;
  cfg.horizon = 10;
  cfg.max_scp_iter = 20;
  RmpcController ctrl(m, err, C, ti, Q, R, cfg);

  Vec x(4);
  x << 0.25, 0.0, 0.03, 0.0;
  auto res = ctrl.solve(x);
  REQUIRE(res.feasible);
  CHECK(res.check.worst_tightened <= 1e-6);
  CHECK(res.check.worst_terminal <= 1e-6);
  CHECK(res.check.worst_tau_excess <= 1e-6);
  CHECK(res.check.nominal_dynamics_residual <= 1e-8);

  SUBCASE("identical inputs give identical results") {
    RmpcController ctrl2(m, err, C, ti, Q, R, cfg);
    auto res2 = ctrl2.solve(x);
    CHECK(res2.u(0) == res.u(0));
    CHECK(res2.objective == res.objective);
    CHECK((res2.plan.tau - res.plan.tau).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("subproblem objectives never increase across accepted SCP steps") {
  auto s = scalar_setup();
  RmpcController ctrl(*s.model, s.err, *s.C, s.ti, s.Q, s.R, scalar_config());
  auto res = ctrl.solve(Vec::Constant(1, 0.5));
  REQUIRE(res.feasible);
  double last = 1e300;
  for (const auto& it : res.iterations) {
    if (!it.accepted) continue;
    CHECK(it.objective <= last + 1e-6 * (1.0 + std::abs(last)));
    last = it.objective;
  }
}

TEST_CASE("a state far outside the feasible region is reported, not crashed") {
  auto s = scalar_setup();
  RmpcController ctrl(*s.model, s.err, *s.C, s.ti, s.Q, s.R, scalar_config());
  auto res = ctrl.solve(Vec::Constant(1, 5.0));
  CHECK_FALSE(res.feasible);
}

TEST_CASE("rti mode performs a single iteration and keeps the plan certified") {
  auto s = scalar_setup();
  ControllerConfig cfg = scalar_config();
  RmpcController warmup(*s.model, s.err, *s.C, s.ti, s.Q, s.R, cfg);
  auto res0 = warmup.solve(Vec::Constant(1, 0.4));
  REQUIRE(res0.feasible);

  cfg.mode = ControllerMode::rti;
  RmpcController ctrl(*s.model, s.err, *s.C, s.ti, s.Q, s.R, cfg);
  auto r1 = ctrl.solve(Vec::Constant(1, 0.4));  // cold start still converges once
  Vec x = step(*s.model, Vec::Constant(1, 0.4), r1.u, Vec::Constant(1, 0.5));
  auto r2 = ctrl.solve(x);
  CHECK(r2.iterations.size() == 1);
  if (r2.feasible) {
    CHECK(r2.check.worst_tightened <= 1e-6);
    CHECK(r2.check.worst_tau_excess <= 1e-6);
  }
}
