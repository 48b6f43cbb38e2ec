#include <random>

#include "doctest.h"
#include "rnmpc/qp.hpp"

using namespace rnmpc;

namespace {

SpMat sparse_from(const Mat& dense) {
  SpMat s = dense.sparseView(1e-300, 1.0);
  s.makeCompressed();
  return s;
}

}  // namespace

TEST_CASE("unconstrained quadratic reaches the analytic minimizer") {
  Mat P(2, 2);
  P << 4.0, 1.0, 1.0, 2.0;
  Vec q(2);
  q << 1.0, 1.0;
  Mat A(0, 2);
  Vec l(0), u(0);
  auto res = solve_qp(sparse_from(P), q, sparse_from(A), l, u);
  REQUIRE(res.status == QpStatus::optimal);
  Vec expect = -P.ldlt().solve(q);
  CHECK((res.x - expect).cwiseAbs().maxCoeff() < 1e-7);
}

TEST_CASE("box-constrained scalar clamps at the bound with correct multiplier") {
  // min 0.5 x^2 - 3x s.t. x <= 1  -> x* = 1, y* = 2 (at upper bound)
  Mat P(1, 1);
  P << 1.0;
  Vec q(1);
  q << -3.0;
  Mat A(1, 1);
  A << 1.0;
  Vec l(1), u(1);
  l << -1e30;
  u << 1.0;
  auto res = solve_qp(sparse_from(P), q, sparse_from(A), l, u);
  REQUIRE(res.status == QpStatus::optimal);
  CHECK(res.x(0) == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(res.y(0) == doctest::Approx(2.0).epsilon(1e-6));
}

TEST_CASE("equality constraints hold to tight tolerance") {
  // min 0.5||x||^2 s.t. x0 + x1 = 1 -> x = (0.5, 0.5)
  Mat P = Mat::Identity(2, 2);
  Vec q = Vec::Zero(2);
  Mat A(1, 2);
  A << 1.0, 1.0;
  Vec l(1), u(1);
  l << 1.0;
  u << 1.0;
  auto res = solve_qp(sparse_from(P), q, sparse_from(A), l, u);
  REQUIRE(res.status == QpStatus::optimal);
  CHECK(res.x(0) == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(res.x(1) == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("random strictly convex QPs satisfy KKT at the reported solution") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int trial = 0; trial < 15; ++trial) {
    int n = 2 + static_cast<int>(rng() % 6);
    int m = 1 + static_cast<int>(rng() % (2 * n));
    Mat M(n, n);
    for (int i = 0; i < n * n; ++i) M.data()[i] = gauss(rng);
    Mat P = M * M.transpose() + 0.5 * Mat::Identity(n, n);
    Vec q(n);
    for (int i = 0; i < n; ++i) q(i) = gauss(rng);
    Mat A(m, n);
    for (int i = 0; i < m * n; ++i) A.data()[i] = gauss(rng);
    // anchor the bounds around a random point so the instance is feasible
    Vec anchor(n);
    for (int i = 0; i < n; ++i) anchor(i) = gauss(rng);
    Vec ax0 = A * anchor;
    Vec l(m), u(m);
    for (int i = 0; i < m; ++i) {
      l(i) = ax0(i) - 0.1 - std::abs(gauss(rng));
      u(i) = ax0(i) + 0.1 + std::abs(gauss(rng));
    }
    auto res = solve_qp(sparse_from(P), q, sparse_from(A), l, u);
    REQUIRE(res.status == QpStatus::optimal);
    // stationarity
    Vec grad = P * res.x + q + A.transpose() * res.y;
    CHECK(grad.cwiseAbs().maxCoeff() < 1e-6);
    // primal feasibility
    Vec ax = A * res.x;
    for (int i = 0; i < m; ++i) {
      CHECK(ax(i) <= u(i) + 1e-6);
      CHECK(ax(i) >= l(i) - 1e-6);
      // complementary slackness by sign convention
      if (res.y(i) > 1e-6) CHECK(ax(i) == doctest::Approx(u(i)).epsilon(1e-4));
      if (res.y(i) < -1e-6) CHECK(ax(i) == doctest::Approx(l(i)).epsilon(1e-4));
    }
  }
}

TEST_CASE("infeasible problem is detected") {
  Mat P = Mat::Identity(1, 1);
  Vec q = Vec::Zero(1);
  Mat A(2, 1);
  A << 1.0, 1.0;
  Vec l(2), u(2);
  l << 1.0, -1e30;
  u << 1e30, -1.0;  // x >= 1 and x <= -1
  auto res = solve_qp(sparse_from(P), q, sparse_from(A), l, u);
  CHECK(res.status == QpStatus::primal_infeasible);
}

TEST_CASE("warm started resolve with updated vectors") {
  Mat P = Mat::Identity(2, 2);
  Vec q(2);
  q << -1.0, 0.0;
  Mat A(2, 2);
  A.setIdentity();
  Vec l = Vec::Constant(2, -5.0), u = Vec::Constant(2, 5.0);
  AdmmQp solver(sparse_from(P), q, sparse_from(A), l, u);
  auto res1 = solver.solve();
  REQUIRE(res1.status == QpStatus::optimal);
  CHECK(res1.x(0) == doctest::Approx(1.0).epsilon(1e-7));

  Vec q2(2);
  q2 << 0.0, -2.0;
  solver.update_vectors(q2, l, u);
  auto res2 = solver.solve_warm(QpSettings{}, res1.x, res1.y);
  REQUIRE(res2.status == QpStatus::optimal);
  CHECK(res2.x(1) == doctest::Approx(2.0).epsilon(1e-7));
}
