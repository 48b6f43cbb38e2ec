#include <cmath>
#include <memory>
#include <random>

#include "doctest.h"
#include "rnmpc/model.hpp"
#include "rnmpc/models.hpp"
#include "rnmpc/polytope.hpp"

using namespace rnmpc;

namespace {

// central finite differences of the discrete map, the reference oracle for
// every analytic Jacobian in the library
Linearization fd_jacobians(const Model& m, const Vec& z, const Vec& v, double h = 1e-6) {
  Linearization lin;
  lin.A = Mat(m.nx(), m.nx());
  lin.B = Mat(m.nx(), m.nu());
  for (int j = 0; j < m.nx(); ++j) {
    Vec zp = z, zm = z;
    zp(j) += h;
    zm(j) -= h;
    lin.A.col(j) = (m.f(zp, v) - m.f(zm, v)) / (2.0 * h);
  }
  for (int j = 0; j < m.nu(); ++j) {
    Vec vp = v, vm = v;
    vp(j) += h;
    vm(j) -= h;
    lin.B.col(j) = (m.f(z, vp) - m.f(z, vm)) / (2.0 * h);
  }
  return lin;
}

double rel_err(const Mat& a, const Mat& b) {
  double worst = 0.0;
  for (int i = 0; i < a.size(); ++i) {
    double denom = std::max({1e-3, std::abs(a.data()[i]), std::abs(b.data()[i])});
    worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]) / denom);
  }
  return worst;
}

void check_jacobians_against_fd(const Model& m, const Vec& x_range, const Vec& u_range,
                                int points, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  for (int t = 0; t < points; ++t) {
    Vec z(m.nx()), v(m.nu());
    for (int i = 0; i < m.nx(); ++i) z(i) = unif(rng) * x_range(i);
    for (int i = 0; i < m.nu(); ++i) v(i) = unif(rng) * u_range(i);
    Linearization an = m.jacobians(z, v);
    Linearization fd = fd_jacobians(m, z, v);
    CHECK(rel_err(an.A, fd.A) < 1e-5);
    CHECK(rel_err(an.B, fd.B) < 1e-5);
  }
}

// plain-double re-implementation of the cart-pole RK4 step, kept free of any
// library type so it is an independent oracle
std::array<double, 4> cartpole_rk4_reference(std::array<double, 4> x, double u,
                                             const CartPoleParams& p) {
  auto deriv = [&](std::array<double, 4> s) {
    double th = s[2], thd = s[3];
    double den = p.cart_mass + p.pole_mass * std::sin(th) * std::sin(th);
    double xdd =
        (u + p.pole_mass * std::sin(th) * (p.pole_length * thd * thd - p.gravity * std::cos(th))) /
        den;
    double thdd = (p.gravity * std::sin(th) - xdd * std::cos(th)) / p.pole_length;
    return std::array<double, 4>{s[1], xdd, thd, thdd};
  };
  auto add = [](std::array<double, 4> a, std::array<double, 4> b, double s) {
    for (int i = 0; i < 4; ++i) a[i] += s * b[i];
    return a;
  };
  auto k1 = deriv(x);
  auto k2 = deriv(add(x, k1, p.dt / 2));
  auto k3 = deriv(add(x, k2, p.dt / 2));
  auto k4 = deriv(add(x, k3, p.dt));
  for (int i = 0; i < 4; ++i) x[i] += p.dt / 6.0 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]);
  return x;
}

}  // namespace

TEST_CASE("double integrator fixed point and drift") {
  auto m = make_double_integrator(0.1, 0.02);
  Vec zero = Vec::Zero(2), u = Vec::Zero(1), w = Vec::Zero(2);
  CHECK(step(*m, zero, u, w).cwiseAbs().maxCoeff() < 1e-12);

  Vec x(2);
  x << 1.0, 0.0;
  Vec next = step(*m, x, u, w);
  CHECK(next(0) == doctest::Approx(1.0));
  CHECK(next(1) == doctest::Approx(0.0));
}

TEST_CASE("all bundled models have the origin as equilibrium") {
  std::vector<std::unique_ptr<Model>> models;
  models.push_back(make_double_integrator());
  models.push_back(std::make_unique<ScalarQuadraticModel>());
  models.push_back(std::make_unique<CartPoleModel>());
  models.push_back(std::make_unique<QuadcopterModel>());
  models.push_back(std::make_unique<RocketModel>());
  for (const auto& m : models) {
    Vec fx = m->f(Vec::Zero(m->nx()), Vec::Zero(m->nu()));
    INFO(m->name());
    CHECK(fx.cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("cart-pole step matches the independent scalar discretization") {
  CartPoleParams p;
  CartPoleModel m(p);
  Vec x(4);
  x << 0.0, 0.0, 0.1, 0.0;
  Vec u(1);
  u << 1.0;
  Vec w = Vec::Zero(4);
  w(0) = 1.0;  // disturbance on the first state channel

  auto ref = cartpole_rk4_reference({0.0, 0.0, 0.1, 0.0}, 1.0, p);
  Vec got = step(m, x, u, w);
  for (int i = 0; i < 4; ++i) {
    double expect = ref[i] + (i == 0 ? p.e_scale : 0.0);
    CHECK(got(i) == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("step rejects dimension mismatches") {
  auto m = make_double_integrator();
  CHECK_THROWS_AS(step(*m, Vec::Zero(3), Vec::Zero(1), Vec::Zero(2)), std::invalid_argument);
  CHECK_THROWS_AS(step(*m, Vec::Zero(2), Vec::Zero(2), Vec::Zero(2)), std::invalid_argument);
}

TEST_CASE("linear model jacobians are returned exactly") {
  Mat A(2, 2), B(2, 1);
  A << 0.9, 0.1, 0.0, 0.8;
  B << 0.0, 1.0;
  LinearModel m("lti", A, B, 0.1 * Mat::Identity(2, 2));
  auto lin = m.jacobians(Vec::Random(2), Vec::Random(1));
  CHECK((lin.A - A).cwiseAbs().maxCoeff() == 0.0);
  CHECK((lin.B - B).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("jacobian consistency against finite differences, 100 points per model") {
  {
    CartPoleModel m;
    Vec xr(4), ur(1);
    xr << 1.5, 1.5, 0.4, 1.0;
    ur << 5.0;
    check_jacobians_against_fd(m, xr, ur, 100, 21);
  }
  {
    QuadcopterModel m;
    Vec xr = Vec::Constant(12, 0.5);
    xr.segment<3>(6).setConstant(0.3);  // keep Euler angles away from singularity
    Vec ur = Vec::Constant(4, 1.0);
    check_jacobians_against_fd(m, xr, ur, 100, 22);
  }
  {
    RocketModel m;
    Vec xr = Vec::Constant(17, 0.3);
    xr.segment<4>(6).setConstant(0.1);  // quaternion deviation stays small
    Vec ur = Vec::Constant(4, 0.5);
    check_jacobians_against_fd(m, xr, ur, 100, 23);
  }
  {
    ScalarQuadraticModel m;
    Vec xr = Vec::Constant(1, 1.0), ur = Vec::Constant(1, 1.0);
    check_jacobians_against_fd(m, xr, ur, 100, 24);
  }
}

TEST_CASE("cart-pole linearization at the origin matches the closed form") {
  CartPoleParams p;
  p.dt = 1e-5;
  CartPoleModel m(p);
  auto lin = m.jacobians(Vec::Zero(4), Vec::Zero(1));
  Mat Act = (lin.A - Mat::Identity(4, 4)) / p.dt;
  // continuous-time pendulum-on-cart linearization at the upright equilibrium
  CHECK(Act(1, 2) == doctest::Approx(-p.pole_mass * p.gravity / p.cart_mass).epsilon(1e-3));
  CHECK(Act(3, 2) ==
        doctest::Approx((p.cart_mass + p.pole_mass) * p.gravity / (p.cart_mass * p.pole_length))
            .epsilon(1e-3));
  Mat Bct = lin.B / p.dt;
  CHECK(Bct(1, 0) == doctest::Approx(1.0 / p.cart_mass).epsilon(1e-3));
  CHECK(Bct(3, 0) == doctest::Approx(-1.0 / (p.cart_mass * p.pole_length)).epsilon(1e-3));
}

TEST_CASE("sigma formula") {
  SUBCASE("mu zero with scaled identity disturbance matrix") {
    Mat A = Mat::Identity(2, 2), B = Mat::Zero(2, 1);
    LinearModel m("lti", A, B, 0.1 * Mat::Identity(2, 2));
    ErrorBoundParams p;
    p.mu = Vec::Zero(2);
    for (double tau : {0.0, 0.5, 3.0}) {
      Vec s = sigma(p, m, Vec::Zero(2), Vec::Zero(1), tau);
      CHECK(s(0) == doctest::Approx(0.1));
      CHECK(s(1) == doctest::Approx(0.1));
    }
  }
  SUBCASE("direct formula") {
    Mat A = Mat::Identity(2, 2), B = Mat::Zero(2, 1);
    LinearModel m("lti", A, B, Mat::Identity(2, 2));
    ErrorBoundParams p;
    p.mu = Vec(2);
    p.mu << 1.0, 2.0;
    Vec s = sigma(p, m, Vec::Zero(2), Vec::Zero(1), 0.5);
    CHECK(s(0) == doctest::Approx(1.25));
    CHECK(s(1) == doctest::Approx(1.5));
  }
  SUBCASE("random values match an independent recomputation") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> unif(0.0, 2.0);
    for (int t = 0; t < 50; ++t) {
      int n = 1 + static_cast<int>(rng() % 4);
      Mat E = Mat::Random(n, n);
      LinearModel m("lti", Mat::Identity(n, n), Mat::Zero(n, 1), E);
      ErrorBoundParams p;
      p.mu = Vec(n);
      for (int i = 0; i < n; ++i) p.mu(i) = unif(rng);
      double tau = unif(rng);
      Vec s = sigma(p, m, Vec::Zero(n), Vec::Zero(1), tau);
      for (int i = 0; i < n; ++i) {
        double expect = tau * tau * p.mu(i) + E.row(i).cwiseAbs().sum();
        CHECK(s(i) == doctest::Approx(expect).epsilon(1e-12));
      }
    }
  }
  SUBCASE("negative tau rejected") {
    Mat A = Mat::Identity(1, 1), B = Mat::Zero(1, 1);
    LinearModel m("lti", A, B, Mat::Identity(1, 1));
    ErrorBoundParams p;
    p.mu = Vec::Zero(1);
    CHECK_THROWS_AS(sigma(p, m, Vec::Zero(1), Vec::Zero(1), -0.1), std::invalid_argument);
  }
}

TEST_CASE("sigma is monotone in tau") {
  CartPoleModel m;
  ErrorBoundParams p;
  p.mu = Vec(4);
  p.mu << 0.3, 0.1, 0.2, 0.4;
  Vec z = Vec::Zero(4), v = Vec::Zero(1);
  double prev = -1.0;
  for (double tau = 0.0; tau <= 2.0; tau += 0.1) {
    Vec s = sigma(p, m, z, v, tau);
    CHECK(s.minCoeff() >= prev - 1e-15);
    prev = s.minCoeff();
  }
}

TEST_CASE("curvature of a linear model is zero") {
  Mat A(2, 2), B(2, 1);
  A << 1.0, 0.1, 0.0, 1.0;
  B << 0.0, 0.1;
  LinearModel m("lti", A, B, 0.1 * Mat::Identity(2, 2));
  auto C = ConstraintSet::box(Vec::Constant(2, 1.0), Vec::Constant(1, 1.0));
  auto params = estimate_curvature(m, C, 50, 5);
  CHECK(params.mu.cwiseAbs().maxCoeff() < 1e-6);
}

namespace {

// f(x,u) = x + dt*x^2 exactly as in the curvature documentation; the analytic
// bound is mu = dt
class PureQuadratic : public Model {
 public:
  explicit PureQuadratic(double dt) : Model("pure_quadratic", 1, 1), dt_(dt) {}
  Vec f(const Vec& x, const Vec&) const override {
    Vec out(1);
    out(0) = x(0) + dt_ * x(0) * x(0);
    return out;
  }
  Mat E(const Vec&, const Vec&) const override { return Mat::Identity(1, 1); }
  Linearization jacobians(const Vec& z, const Vec&) const override {
    Mat A(1, 1), B(1, 1);
    A(0, 0) = 1.0 + 2.0 * dt_ * z(0);
    B(0, 0) = 0.0;
    return {A, B};
  }
  double dt_;
};

}  // namespace

TEST_CASE("curvature of the scalar quadratic model equals dt") {
  const double dt = 0.1;
  PureQuadratic m(dt);
  auto C = ConstraintSet::box(Vec::Constant(1, 1.0), Vec::Constant(1, 1.0));
  auto params = estimate_curvature(m, C, 10000, 17);
  // Hessian is constant so the estimate converges immediately; 5% margin
  CHECK(params.mu(0) == doctest::Approx(dt).epsilon(0.05));
}

TEST_CASE("cart-pole curvature is reproducible across seeds within 10%") {
  CartPoleModel m;
  auto C = ConstraintSet::box((Vec(4) << 1.0, 1.0, 0.25, 1.0).finished(), Vec::Constant(1, 8.0));
  auto p1 = estimate_curvature(m, C, 300, 101);
  auto p2 = estimate_curvature(m, C, 300, 202);
  for (int i = 0; i < 4; ++i) {
    double denom = std::max({1e-9, p1.mu(i), p2.mu(i)});
    CHECK(std::abs(p1.mu(i) - p2.mu(i)) / denom < 0.10);
  }
}

TEST_CASE("assumption-1 error bound holds for the scalar quadratic model") {
  ScalarQuadraticModel m;
  const double dt = m.dt();
  ErrorBoundParams p;
  p.mu = Vec::Constant(1, dt);  // analytic curvature
  std::mt19937_64 rng(29);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  for (int t = 0; t < 10000; ++t) {
    double z = unif(rng), v = unif(rng);
    double tau = 0.5 * std::abs(unif(rng)) + 1e-6;
    double dx = unif(rng) * tau, du = unif(rng) * tau;
    double x = z + dx, u = v + du;
    auto lin = m.jacobians(Vec::Constant(1, z), Vec::Constant(1, v));
    double pred = m.f(Vec::Constant(1, z), Vec::Constant(1, v))(0) + lin.A(0, 0) * dx +
                  lin.B(0, 0) * du;
    double truth = m.f(Vec::Constant(1, x), Vec::Constant(1, u))(0);
    Vec s = sigma(p, m, Vec::Constant(1, z), Vec::Constant(1, v), tau);
    // deterministic linearization error only; the disturbance part of sigma
    // (here |E| = e_scale) comes on top of the curvature term
    CHECK(std::abs(pred - truth) <= s(0) - 0.0 + 1e-12);
  }
}
