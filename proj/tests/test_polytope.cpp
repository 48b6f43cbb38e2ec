#include <memory>

#include "doctest.h"
#include "rnmpc/model.hpp"
#include "rnmpc/models.hpp"
#include "rnmpc/polytope.hpp"
#include "rnmpc/riccati.hpp"

using namespace rnmpc;

TEST_CASE("constraint set validation") {
  SUBCASE("origin must be strictly feasible") {
    Mat rows(2, 2);
    rows << 1.0, 0.0, -1.0, 0.0;
    Vec off(2);
    off << 0.0, -1.0;  // first row touches the origin
    CHECK_THROWS_AS(ConstraintSet(rows, off, 1, 1), std::invalid_argument);
  }
  SUBCASE("unbounded set rejected") {
    Mat rows(2, 2);
    rows << 1.0, 0.0, -1.0, 0.0;  // nothing constrains the second coordinate
    Vec off = Vec::Constant(2, -1.0);
    CHECK_THROWS_AS(ConstraintSet(rows, off, 1, 1), std::invalid_argument);
  }
  SUBCASE("box helper is bounded with the origin inside") {
    auto C = ConstraintSet::box(Vec::Constant(2, 1.0), Vec::Constant(1, 2.0));
    CHECK(C.count() == 6);
    CHECK(C.contains(Vec::Zero(2), Vec::Zero(1)));
    CHECK_FALSE(C.contains(Vec::Constant(2, 1.1), Vec::Zero(1)));
  }
}

TEST_CASE("support values on boxes") {
  auto C = ConstraintSet::box(Vec::Constant(2, 1.0), Vec::Constant(1, 1.0));
  CHECK(support(C, Vec::Ones(3)) == doctest::Approx(3.0));
  Vec dir(3);
  dir << 2.0, 0.0, 0.0;
  CHECK(support(C, dir) == doctest::Approx(2.0));
}

TEST_CASE("redundant halfspace pruning") {
  Mat rows(3, 1);
  rows << 1.0, 1.0, -1.0;
  Vec off(3);
  off << -1.0, -2.0, -1.0;  // x <= 1, x <= 2 (redundant), -x <= 1
  Polytope p{rows, off};
  p.prune_redundant();
  CHECK(p.count() == 2);
  CHECK(p.support(Vec::Ones(1)) == doctest::Approx(1.0));
}

TEST_CASE("scalar minimal RPI set matches the analytic fixed point") {
  // x+ = 0.5 x + w, |w| <= 0.1: fixed point of s = 0.5 s + 0.1 gives [-0.2, 0.2]
  Mat A(1, 1);
  A << 0.5;
  Vec sig = Vec::Constant(1, 0.1);
  Polytope xf = min_rpi_outer(A, sig);
  REQUIRE(xf.count() == 2);
  CHECK(xf.support(Vec::Ones(1)) == doctest::Approx(0.2).epsilon(1e-9));
  CHECK(xf.support(Vec::Constant(1, -1.0)) == doctest::Approx(0.2).epsilon(1e-9));
}

TEST_CASE("zero disturbance degenerates to the constraint-admissible invariant set") {
  Mat A(1, 1);
  A << 0.5;
  Mat rows(2, 1);
  rows << 1.0, -1.0;
  Vec off = Vec::Constant(2, -1.0);
  Polytope xc{rows, off};
  Polytope xf = max_rpi_set(A, Vec::Zero(1), xc);
  CHECK(xf.support(Vec::Ones(1)) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(xf.support(Vec::Constant(1, -1.0)) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("backward recursion shrinks the admissible set when disturbance requires it") {
  // with |w| <= 0.3 the one-step pre-set of [-1,1] is [-1.4, 1.4]: still the
  // whole box; with a rotation-like map the recursion has to iterate
  Mat A(2, 2);
  A << 0.0, 0.9, -0.9, 0.0;
  Mat rows(4, 2);
  rows << 1, 0, -1, 0, 0, 1, 0, -1;
  Vec off = Vec::Constant(4, -1.0);
  Polytope xc{rows, off};
  Polytope xf = max_rpi_set(A, Vec::Constant(2, 0.05), xc);
  CHECK_FALSE(xf.is_empty());
  // invariance: support of A*Xf plus disturbance within Xf rows
  for (int i = 0; i < xf.count(); ++i) {
    Vec c = xf.rows.row(i).transpose();
    double lhs = xf.support(Vec(A.transpose() * c)) + 0.05 * c.cwiseAbs().sum();
    CHECK(lhs <= -xf.offsets(i) + 1e-8);
  }
}

namespace {

TerminalIngredients scalar_hand_ti(double sigma_f, double halfwidth) {
  TerminalIngredients ti;
  ti.Xf_rows = Mat(2, 1);
  ti.Xf_rows << 1.0, -1.0;
  ti.Xf_offsets = Vec::Constant(2, -halfwidth);
  ti.K_f = Mat::Zero(1, 1);
  ti.A_cl = Mat::Constant(1, 1, 0.5);
  ti.sigma_f = Vec::Constant(1, sigma_f);
  ti.tau_f = halfwidth;
  ti.P = Mat::Constant(1, 1, 4.0 / 3.0);
  return ti;
}

}  // namespace

TEST_CASE("verify_rpi margins on the analytic scalar case") {
  Mat A(1, 1), B(1, 1);
  A << 0.5;
  B << 1.0;
  LinearModel m("scalar_lti", A, B, 0.1 * Mat::Identity(1, 1));
  ErrorBoundParams err;
  err.mu = Vec::Zero(1);
  auto C = ConstraintSet::box(Vec::Constant(1, 1.0), Vec::Constant(1, 1.0));
  Mat Q = Mat::Identity(1, 1), R = Mat::Identity(1, 1);

  SUBCASE("exact fixed point has zero margin at both faces") {
    auto ti = scalar_hand_ti(0.1, 0.2);
    auto rep = verify_rpi(ti, m, err, C, Q, R);
    CHECK(rep.rpi_ok);
    CHECK(rep.admissible_ok);
    CHECK(rep.lyapunov_ok);
    CHECK(rep.rpi_margins(0) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(rep.rpi_margins(1) == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("inflated disturbance fails verification") {
    auto ti = scalar_hand_ti(1.0, 0.2);  // Sigma_f x10
    auto rep = verify_rpi(ti, m, err, C, Q, R);
    CHECK_FALSE(rep.rpi_ok);
  }
  SUBCASE("halved terminal set reports negative margins") {
    auto ti = scalar_hand_ti(0.1, 0.1);
    auto rep = verify_rpi(ti, m, err, C, Q, R);
    CHECK_FALSE(rep.rpi_ok);
    CHECK(rep.rpi_margins(0) == doctest::Approx(-0.05).epsilon(1e-9));
  }
}

TEST_CASE("synth_terminal on the scalar quadratic model") {
  ScalarQuadraticModel m;
  ErrorBoundParams err;
  err.mu = Vec::Constant(1, m.dt());
  auto C = ConstraintSet::box(Vec::Constant(1, 1.0), Vec::Constant(1, 1.0));
  Mat Q = Mat::Identity(1, 1), R = 0.1 * Mat::Identity(1, 1);
  auto ti = synth_terminal(m, Q, R, err, C);
  auto rep = verify_rpi(ti, m, err, C, Q, R);
  CHECK(rep.ok());
  CHECK(ti.tau_f > 0.0);
  CHECK(ti.n_f() == 2);

  SUBCASE("synthesis is deterministic") {
    auto ti2 = synth_terminal(m, Q, R, err, C);
    CHECK((ti.Xf_offsets - ti2.Xf_offsets).cwiseAbs().maxCoeff() == 0.0);
    CHECK(ti.tau_f == ti2.tau_f);
  }
}

TEST_CASE("synth_terminal on the cart-pole with sampled curvature") {
  CartPoleParams p;
  p.e_scale = 1e-6;  // the curvature bound caps the admissible disturbance scale
  CartPoleModel m(p);
  auto C = ConstraintSet::box((Vec(4) << 1.0, 1.0, 0.15, 1.0).finished(), Vec::Constant(1, 8.0));
  auto err = estimate_curvature(m, C, 60, 12);
  Mat Q = Mat::Identity(4, 4);
  Mat R = 0.3 * Mat::Identity(1, 1);
  auto ti = synth_terminal(m, Q, R, err, C);
  CHECK_FALSE(ti.xf().is_empty());
  auto rep = verify_rpi(ti, m, err, C, Q, R);
  CHECK(rep.ok());
  CHECK(rep.rpi_margins.minCoeff() >= -1e-9);
  CHECK(rep.admissible_margins.minCoeff() >= -1e-9);
}

TEST_CASE("excessive disturbance raises the documented error") {
  Mat A(1, 1), B(1, 1);
  A << 0.99;
  B << 1.0;
  LinearModel m("slow", A, B, 5.0 * Mat::Identity(1, 1));  // huge disturbance
  ErrorBoundParams err;
  err.mu = Vec::Zero(1);
  auto C = ConstraintSet::box(Vec::Constant(1, 1.0), Vec::Constant(1, 1.0));
  Mat Q = Mat::Identity(1, 1), R = Mat::Identity(1, 1);
  CHECK_THROWS_WITH_AS(synth_terminal(m, Q, R, err, C),
                       doctest::Contains("disturbance too large"), std::runtime_error);
}

TEST_CASE("terminal ingredients JSON round trip and stale-cache rejection") {
  ScalarQuadraticModel m;
  ErrorBoundParams err;
  err.mu = Vec::Constant(1, m.dt());
  auto C = ConstraintSet::box(Vec::Constant(1, 1.0), Vec::Constant(1, 1.0));
  Mat Q = Mat::Identity(1, 1), R = 0.1 * Mat::Identity(1, 1);
  auto ti = synth_terminal(m, Q, R, err, C);

  std::string key = terminal_cache_key(m, err, C, Q, R);
  std::string text = terminal_to_json(ti, key);
  auto ti2 = terminal_from_json(text, key);
  CHECK((ti.Xf_rows - ti2.Xf_rows).cwiseAbs().maxCoeff() == 0.0);
  CHECK((ti.P - ti2.P).cwiseAbs().maxCoeff() == 0.0);
  CHECK(ti.tau_f == ti2.tau_f);

  CHECK_THROWS_WITH_AS(terminal_from_json(text, "deadbeefdeadbeef"),
                       doctest::Contains("stale"), std::runtime_error);

  // changing the weights changes the key
  Mat Q2 = 2.0 * Q;
  CHECK(terminal_cache_key(m, err, C, Q2, R) != key);
}

TEST_CASE("dare and dlyap basics") {
  Mat A(2, 2), B(2, 1);
  A << 1.0, 0.1, 0.0, 1.0;
  B << 0.0, 0.1;
  Mat Q = Mat::Identity(2, 2), R = Mat::Identity(1, 1);
  auto lqr = dare(A, B, Q, R);
  Mat Acl = A + B * lqr.K;
  Eigen::EigenSolver<Mat> eig(Acl);
  CHECK(eig.eigenvalues().cwiseAbs().maxCoeff() < 1.0);

  Mat S = Q + lqr.K.transpose() * R * lqr.K;
  Mat P = dlyap(Acl, S);
  Mat resid = Acl.transpose() * P * Acl - P + S;
  CHECK(resid.cwiseAbs().maxCoeff() < 1e-9);
  // the DARE solution solves the same Lyapunov equation for the LQR gain
  CHECK((P - lqr.P).cwiseAbs().maxCoeff() < 1e-7);
}
