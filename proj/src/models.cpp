#include "rnmpc/models.hpp"

#include <cmath>

namespace rnmpc {
namespace {

// Continuous-time dynamics with analytic Jacobians; RK4 discretization
// propagates the Jacobians through the stages by the chain rule so the
// discrete-time Jacobians are exact.
struct CtDerivatives {
  Vec xdot;
  Mat fx;
  Mat fu;
};

template <typename F>
Vec rk4_step(const F& ct, const Vec& x, const Vec& u, double dt) {
  Vec k1 = ct(x, u).xdot;
  Vec k2 = ct(x + 0.5 * dt * k1, u).xdot;
  Vec k3 = ct(x + 0.5 * dt * k2, u).xdot;
  Vec k4 = ct(x + dt * k3, u).xdot;
  return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

template <typename F>
Linearization rk4_jacobians(const F& ct, const Vec& x, const Vec& u, double dt) {
  const int nx = static_cast<int>(x.size());
  const int nu = static_cast<int>(u.size());
  const Mat I = Mat::Identity(nx, nx);

  auto d1 = ct(x, u);
  Mat J1x = d1.fx, J1u = d1.fu;

  Vec x2 = x + 0.5 * dt * d1.xdot;
  auto d2 = ct(x2, u);
  Mat J2x = d2.fx * (I + 0.5 * dt * J1x);
  Mat J2u = d2.fx * (0.5 * dt * J1u) + d2.fu;

  Vec x3 = x + 0.5 * dt * d2.xdot;
  auto d3 = ct(x3, u);
  Mat J3x = d3.fx * (I + 0.5 * dt * J2x);
  Mat J3u = d3.fx * (0.5 * dt * J2u) + d3.fu;

  Vec x4 = x + dt * d3.xdot;
  auto d4 = ct(x4, u);
  Mat J4x = d4.fx * (I + dt * J3x);
  Mat J4u = d4.fx * (dt * J3u) + d4.fu;

  Linearization lin;
  lin.A = I + dt / 6.0 * (J1x + 2.0 * J2x + 2.0 * J3x + J4x);
  lin.B = dt / 6.0 * (J1u + 2.0 * J2u + 2.0 * J3u + J4u);
  return lin;
}

Mat skew(const Eigen::Vector3d& v) {
  Mat s = Mat::Zero(3, 3);
  s(0, 1) = -v.z(); s(0, 2) = v.y();
  s(1, 0) = v.z();  s(1, 2) = -v.x();
  s(2, 0) = -v.y(); s(2, 1) = v.x();
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// LinearModel

LinearModel::LinearModel(std::string name, Mat A, Mat B, Mat E_mat)
    : Model(std::move(name), static_cast<int>(A.rows()), static_cast<int>(B.cols())),
      A_(std::move(A)), B_(std::move(B)), Emat_(std::move(E_mat)) {
  require(A_.rows() == A_.cols(), "LinearModel: A must be square");
  require(B_.rows() == A_.rows(), "LinearModel: B row mismatch");
  require(Emat_.rows() == A_.rows() && Emat_.cols() == A_.rows(), "LinearModel: E must be nx x nx");
}

Vec LinearModel::f(const Vec& x, const Vec& u) const { return A_ * x + B_ * u; }
Mat LinearModel::E(const Vec&, const Vec&) const { return Emat_; }
Linearization LinearModel::jacobians(const Vec&, const Vec&) const { return {A_, B_}; }

std::unique_ptr<Model> make_double_integrator(double dt, double e_scale) {
  Mat A(2, 2), B(2, 1);
  A << 1.0, dt, 0.0, 1.0;
  B << 0.0, dt;
  return std::make_unique<LinearModel>("double_integrator", A, B, e_scale * Mat::Identity(2, 2));
}

// ---------------------------------------------------------------------------
// ScalarQuadraticModel

ScalarQuadraticModel::ScalarQuadraticModel(ScalarQuadraticParams p)
    : Model("scalar_quadratic", 1, 1), p_(p) {}

Vec ScalarQuadraticModel::f(const Vec& x, const Vec& u) const {
  Vec next(1);
  next(0) = x(0) + p_.dt * (u(0) + x(0) * x(0));
  return next;
}

Mat ScalarQuadraticModel::E(const Vec&, const Vec&) const {
  return p_.e_scale * Mat::Identity(1, 1);
}

Linearization ScalarQuadraticModel::jacobians(const Vec& z, const Vec&) const {
  Mat A(1, 1), B(1, 1);
  A(0, 0) = 1.0 + 2.0 * p_.dt * z(0);
  B(0, 0) = p_.dt;
  return {A, B};
}

// ---------------------------------------------------------------------------
// CartPoleModel

namespace {

CtDerivatives cartpole_ct(const CartPoleParams& p, const Vec& x, const Vec& u) {
  const double th = x(2), thd = x(3), force = u(0);
  const double mc = p.cart_mass, mp = p.pole_mass, l = p.pole_length, g = p.gravity;
  const double s = std::sin(th), c = std::cos(th);

  const double den = mc + mp * s * s;
  const double num = force + mp * s * (l * thd * thd - g * c);
  const double xdd = num / den;
  const double thdd = (g * s - xdd * c) / l;

  CtDerivatives d;
  d.xdot = Vec(4);
  d.xdot << x(1), xdd, thd, thdd;

  // partials of xdd
  const double dnum_dth = mp * c * (l * thd * thd - g * c) + mp * s * g * s;
  const double dden_dth = 2.0 * mp * s * c;
  const double dxdd_dth = dnum_dth / den - num * dden_dth / (den * den);
  const double dxdd_dthd = 2.0 * mp * s * l * thd / den;
  const double dxdd_du = 1.0 / den;

  // partials of thdd = (g s - xdd c)/l
  const double dthdd_dth = (g * c - dxdd_dth * c + xdd * s) / l;
  const double dthdd_dthd = -c * dxdd_dthd / l;
  const double dthdd_du = -c * dxdd_du / l;

  d.fx = Mat::Zero(4, 4);
  d.fx(0, 1) = 1.0;
  d.fx(1, 2) = dxdd_dth;
  d.fx(1, 3) = dxdd_dthd;
  d.fx(2, 3) = 1.0;
  d.fx(3, 2) = dthdd_dth;
  d.fx(3, 3) = dthdd_dthd;

  d.fu = Mat::Zero(4, 1);
  d.fu(1, 0) = dxdd_du;
  d.fu(3, 0) = dthdd_du;
  return d;
}

}  // namespace

CartPoleModel::CartPoleModel(CartPoleParams p) : Model("cartpole", 4, 1), p_(p) {}

Vec CartPoleModel::f(const Vec& x, const Vec& u) const {
  auto ct = [this](const Vec& xs, const Vec& us) { return cartpole_ct(p_, xs, us); };
  return rk4_step(ct, x, u, p_.dt);
}

Mat CartPoleModel::E(const Vec&, const Vec&) const {
  return p_.e_scale * Mat::Identity(4, 4);
}

Linearization CartPoleModel::jacobians(const Vec& z, const Vec& v) const {
  auto ct = [this](const Vec& xs, const Vec& us) { return cartpole_ct(p_, xs, us); };
  return rk4_jacobians(ct, z, v, p_.dt);
}

// ---------------------------------------------------------------------------
// QuadcopterModel

namespace {

CtDerivatives quadcopter_ct(const QuadcopterParams& p, const Vec& x, const Vec& u) {
  using V3 = Eigen::Vector3d;
  const V3 vel = x.segment<3>(3);
  const double phi = x(6), th = x(7), psi = x(8);
  const V3 om = x.segment<3>(9);
  const double thrust = p.mass * p.gravity + u(0);
  const V3 tau = u.tail<3>();

  const double sph = std::sin(phi), cph = std::cos(phi);
  const double sth = std::sin(th), cth = std::cos(th);
  const double sps = std::sin(psi), cps = std::cos(psi);
  const double tth = sth / cth;

  // body z axis in world frame (ZYX Euler)
  V3 bz(cps * sth * cph + sps * sph, sps * sth * cph - cps * sph, cth * cph);
  // its partials
  V3 dbz_dphi(-cps * sth * sph + sps * cph, -sps * sth * sph - cps * cph, -cth * sph);
  V3 dbz_dth(cps * cth * cph, sps * cth * cph, -sth * cph);
  V3 dbz_dpsi(-sps * sth * cph + cps * sph, cps * sth * cph + sps * sph, 0.0);

  V3 acc = (thrust / p.mass) * bz - V3(0, 0, p.gravity);

  // Euler kinematics [phi; th; psi]' = W(phi, th) * om
  Mat W(3, 3);
  W << 1.0, sph * tth, cph * tth,
       0.0, cph, -sph,
       0.0, sph / cth, cph / cth;
  V3 edot = W * om;
  Mat dW_dphi(3, 3), dW_dth(3, 3);
  dW_dphi << 0.0, cph * tth, -sph * tth,
             0.0, -sph, -cph,
             0.0, cph / cth, -sph / cth;
  const double dtth = 1.0 / (cth * cth);
  const double dsec = sth / (cth * cth);
  dW_dth << 0.0, sph * dtth, cph * dtth,
            0.0, 0.0, 0.0,
            0.0, sph * dsec, cph * dsec;

  const V3 J = p.inertia;
  V3 Jom(J.x() * om.x(), J.y() * om.y(), J.z() * om.z());
  V3 omdot((tau.x() - (om.y() * Jom.z() - om.z() * Jom.y())) / J.x(),
           (tau.y() - (om.z() * Jom.x() - om.x() * Jom.z())) / J.y(),
           (tau.z() - (om.x() * Jom.y() - om.y() * Jom.x())) / J.z());

  CtDerivatives d;
  d.xdot = Vec(12);
  d.xdot << vel, acc, edot, omdot;

  d.fx = Mat::Zero(12, 12);
  d.fx.block<3, 3>(0, 3).setIdentity();
  d.fx.block<3, 1>(3, 6) = (thrust / p.mass) * dbz_dphi;
  d.fx.block<3, 1>(3, 7) = (thrust / p.mass) * dbz_dth;
  d.fx.block<3, 1>(3, 8) = (thrust / p.mass) * dbz_dpsi;
  d.fx.block<3, 1>(6, 6) = dW_dphi * om;
  d.fx.block<3, 1>(6, 7) = dW_dth * om;
  d.fx.block<3, 3>(6, 9) = W;
  // d(omdot)/d(om), e.g. omdot_x = (tau_x - om_y*J_z*om_z + om_z*J_y*om_y)/J_x
  Mat dcross = Mat::Zero(3, 3);
  dcross(0, 1) = (-J.z() * om.z() + J.y() * om.z()) / J.x();
  dcross(0, 2) = (-J.z() * om.y() + J.y() * om.y()) / J.x();
  dcross(1, 0) = (J.z() * om.z() - J.x() * om.z()) / J.y();
  dcross(1, 2) = (J.z() * om.x() - J.x() * om.x()) / J.y();
  dcross(2, 0) = (J.x() * om.y() - J.y() * om.y()) / J.z();
  dcross(2, 1) = (J.x() * om.x() - J.y() * om.x()) / J.z();
  d.fx.block<3, 3>(9, 9) = dcross;

  d.fu = Mat::Zero(12, 4);
  d.fu.block<3, 1>(3, 0) = bz / p.mass;
  d.fu(9, 1) = 1.0 / J.x();
  d.fu(10, 2) = 1.0 / J.y();
  d.fu(11, 3) = 1.0 / J.z();
  return d;
}

}  // namespace

QuadcopterModel::QuadcopterModel(QuadcopterParams p) : Model("quadcopter", 12, 4), p_(p) {}

Vec QuadcopterModel::f(const Vec& x, const Vec& u) const {
  auto ct = [this](const Vec& xs, const Vec& us) { return quadcopter_ct(p_, xs, us); };
  return rk4_step(ct, x, u, p_.dt);
}

Mat QuadcopterModel::E(const Vec&, const Vec&) const {
  return p_.e_scale * Mat::Identity(12, 12);
}

Linearization QuadcopterModel::jacobians(const Vec& z, const Vec& v) const {
  auto ct = [this](const Vec& xs, const Vec& us) { return quadcopter_ct(p_, xs, us); };
  return rk4_jacobians(ct, z, v, p_.dt);
}

// ---------------------------------------------------------------------------
// RocketModel

namespace {

// rotate v by the (not necessarily unit) quaternion q = (w, uvec); the raw
// rotation is scaled by 1/|q|^2 so unit-norm drift does not bias it
struct RotResult {
  Eigen::Vector3d y;
  Mat dy_dq;  // 3 x 4
  Mat R;      // dy/dv
};

RotResult rotate(const Eigen::Vector4d& q, const Eigen::Vector3d& v) {
  using V3 = Eigen::Vector3d;
  const double w = q(0);
  const V3 uvec = q.tail<3>();
  const double N = q.squaredNorm();
  const V3 uxv = uvec.cross(v);
  const V3 y_raw = (w * w - uvec.squaredNorm()) * v + 2.0 * uvec.dot(v) * uvec + 2.0 * w * uxv;

  Mat dyraw_dq(3, 4);
  dyraw_dq.col(0) = 2.0 * w * v + 2.0 * uxv;
  Mat dyraw_du = -2.0 * v * uvec.transpose() + 2.0 * uvec * v.transpose() +
                 2.0 * uvec.dot(v) * Mat::Identity(3, 3) - 2.0 * w * skew(v);
  dyraw_dq.rightCols(3) = dyraw_du;

  RotResult r;
  r.y = y_raw / N;
  r.dy_dq = dyraw_dq / N - (y_raw / (N * N)) * (2.0 * q.transpose());
  Mat Rm = ((w * w - uvec.squaredNorm()) * Mat::Identity(3, 3) + 2.0 * uvec * uvec.transpose() +
            2.0 * w * skew(uvec)) / N;
  r.R = Rm;
  return r;
}

CtDerivatives rocket_ct(const RocketParams& p, const Vec& x, const Vec& u) {
  using V3 = Eigen::Vector3d;
  using V4 = Eigen::Vector4d;
  const V3 vel = x.segment<3>(3);
  V4 q = x.segment<4>(6);
  q(0) += 1.0;  // stored as deviation from identity
  const V3 om = x.segment<3>(10);
  const V4 act = x.segment<4>(13);

  const double g1 = act(0), g2 = act(1);
  const double thrust = p.mass * p.gravity + p.thrust_gain * act(2);
  const double s1 = std::sin(g1), c1 = std::cos(g1);
  const double s2 = std::sin(g2), c2 = std::cos(g2);

  // thrust direction in body frame, unit at zero gimbal
  V3 dir(s2, -s1 * c2, c1 * c2);
  Mat ddir_dg(3, 2);
  ddir_dg << 0.0, c2,
             -c1 * c2, s1 * s2,
             -s1 * c2, -c1 * s2;
  V3 Fb = thrust * dir;
  Mat dFb_dact = Mat::Zero(3, 4);
  dFb_dact.leftCols(2) = thrust * ddir_dg;
  dFb_dact.col(2) = p.thrust_gain * dir;

  auto rot = rotate(q, Fb);
  V3 acc = rot.y / p.mass - V3(0, 0, p.gravity);

  // body torque: engine mounted at [0,0,-L]
  const double L = p.gimbal_arm;
  V3 tau(L * Fb.y(), -L * Fb.x(), p.roll_gain * act(3));
  Mat dtau_dFb = Mat::Zero(3, 3);
  dtau_dFb(0, 1) = L;
  dtau_dFb(1, 0) = -L;

  const V3 J = p.inertia;
  V3 Jom(J.x() * om.x(), J.y() * om.y(), J.z() * om.z());
  V3 omdot((tau.x() - (om.y() * Jom.z() - om.z() * Jom.y())) / J.x(),
           (tau.y() - (om.z() * Jom.x() - om.x() * Jom.z())) / J.y(),
           (tau.z() - (om.x() * Jom.y() - om.y() * Jom.x())) / J.z());

  // quaternion kinematics qdot = 0.5 q (x) (0, om)
  const double w = q(0);
  const V3 uvec = q.tail<3>();
  V4 qdot;
  qdot(0) = -0.5 * uvec.dot(om);
  qdot.tail<3>() = 0.5 * (w * om + uvec.cross(om));

  V4 actdot = (u - act).cwiseQuotient(p.actuator_tau);

  CtDerivatives d;
  d.xdot = Vec(17);
  d.xdot << vel, acc, qdot, omdot, actdot;

  d.fx = Mat::Zero(17, 17);
  d.fx.block<3, 3>(0, 3).setIdentity();
  d.fx.block<3, 4>(3, 6) = rot.dy_dq / p.mass;
  d.fx.block<3, 4>(3, 13) = rot.R * dFb_dact / p.mass;

  // dqdot/dq
  Mat dqdot_dq = Mat::Zero(4, 4);
  dqdot_dq.block<1, 3>(0, 1) = -0.5 * om.transpose();
  dqdot_dq.block<3, 1>(1, 0) = 0.5 * om;
  dqdot_dq.block<3, 3>(1, 1) = -0.5 * skew(om);
  d.fx.block<4, 4>(6, 6) = dqdot_dq;
  Mat dqdot_dom(4, 3);
  dqdot_dom.row(0) = -0.5 * uvec.transpose();
  dqdot_dom.bottomRows(3) = 0.5 * (w * Mat::Identity(3, 3) + skew(uvec));
  d.fx.block<4, 3>(6, 10) = dqdot_dom;

  Mat dcross(3, 3);
  dcross.setZero();
  dcross(0, 1) = (-J.z() * om.z() + J.y() * om.z()) / J.x();
  dcross(0, 2) = (-J.z() * om.y() + J.y() * om.y()) / J.x();
  dcross(1, 0) = (J.z() * om.z() - J.x() * om.z()) / J.y();
  dcross(1, 2) = (J.z() * om.x() - J.x() * om.x()) / J.y();
  dcross(2, 0) = (J.x() * om.y() - J.y() * om.y()) / J.z();
  dcross(2, 1) = (J.x() * om.x() - J.y() * om.x()) / J.z();
  d.fx.block<3, 3>(10, 10) = dcross;

  Mat dtau_dact = dtau_dFb * dFb_dact;
  dtau_dact(2, 3) += p.roll_gain;
  Mat Jinv = Mat::Zero(3, 3);
  Jinv(0, 0) = 1.0 / J.x();
  Jinv(1, 1) = 1.0 / J.y();
  Jinv(2, 2) = 1.0 / J.z();
  d.fx.block<3, 4>(10, 13) = Jinv * dtau_dact;

  for (int i = 0; i < 4; ++i) d.fx(13 + i, 13 + i) = -1.0 / p.actuator_tau(i);

  d.fu = Mat::Zero(17, 4);
  for (int i = 0; i < 4; ++i) d.fu(13 + i, i) = 1.0 / p.actuator_tau(i);
  return d;
}

}  // namespace

RocketModel::RocketModel(RocketParams p) : Model("rocket17", 17, 4), p_(p) {}

Vec RocketModel::f(const Vec& x, const Vec& u) const {
  auto ct = [this](const Vec& xs, const Vec& us) { return rocket_ct(p_, xs, us); };
  return rk4_step(ct, x, u, p_.dt);
}

Mat RocketModel::E(const Vec&, const Vec&) const {
  return p_.e_scale * Mat::Identity(17, 17);
}

Linearization RocketModel::jacobians(const Vec& z, const Vec& v) const {
  auto ct = [this](const Vec& xs, const Vec& us) { return rocket_ct(p_, xs, us); };
  return rk4_jacobians(ct, z, v, p_.dt);
}

}  // namespace rnmpc
