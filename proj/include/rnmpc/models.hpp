#pragma once

#include <memory>

#include "rnmpc/model.hpp"

namespace rnmpc {

/// Generic linear system x+ = A x + B u + E_mat w.
class LinearModel : public Model {
 public:
  LinearModel(std::string name, Mat A, Mat B, Mat E_mat);
  Vec f(const Vec& x, const Vec& u) const override;
  Mat E(const Vec& x, const Vec& u) const override;
  Linearization jacobians(const Vec& z, const Vec& v) const override;

 private:
  Mat A_, B_, Emat_;
};

/// Double integrator with A = [[1, dt],[0, 1]], B = [0, dt]'.
std::unique_ptr<Model> make_double_integrator(double dt = 0.1, double e_scale = 0.02);

struct ScalarQuadraticParams {
  double dt = 0.1;
  double e_scale = 0.02;
};

/// Scalar validation system x+ = x + dt*(u + x^2); the curvature bound is
/// exactly mu = dt.
class ScalarQuadraticModel : public Model {
 public:
  explicit ScalarQuadraticModel(ScalarQuadraticParams p = {});
  Vec f(const Vec& x, const Vec& u) const override;
  Mat E(const Vec& x, const Vec& u) const override;
  Linearization jacobians(const Vec& z, const Vec& v) const override;
  double dt() const { return p_.dt; }

 private:
  ScalarQuadraticParams p_;
};

struct CartPoleParams {
  double dt = 0.1;
  double cart_mass = 1.0;
  double pole_mass = 0.2;
  double pole_length = 0.5;
  double gravity = 9.81;
  double e_scale = 0.01;
};

/// Cart-pole, pole angle measured from the upright equilibrium.
/// State [p, p_dot, theta, theta_dot], input [force]; RK4 discretization.
class CartPoleModel : public Model {
 public:
  explicit CartPoleModel(CartPoleParams p = {});
  Vec f(const Vec& x, const Vec& u) const override;
  Mat E(const Vec& x, const Vec& u) const override;
  Linearization jacobians(const Vec& z, const Vec& v) const override;
  const CartPoleParams& params() const { return p_; }

 private:
  CartPoleParams p_;
};

struct QuadcopterParams {
  double dt = 0.05;
  double mass = 1.0;
  Eigen::Vector3d inertia{0.01, 0.01, 0.02};
  double gravity = 9.81;
  double e_scale = 0.005;
};

/// 12-state quadcopter: position, velocity, ZYX Euler angles, body rates.
/// Inputs are thrust deviation from hover and three body torques.
class QuadcopterModel : public Model {
 public:
  explicit QuadcopterModel(QuadcopterParams p = {});
  Vec f(const Vec& x, const Vec& u) const override;
  Mat E(const Vec& x, const Vec& u) const override;
  Linearization jacobians(const Vec& z, const Vec& v) const override;

 private:
  QuadcopterParams p_;
};

struct RocketParams {
  double dt = 0.05;
  double mass = 2.5;
  Eigen::Vector3d inertia{0.12, 0.12, 0.03};
  double gravity = 9.81;
  double gimbal_arm = 0.7;       ///< engine offset below the center of mass
  double thrust_gain = 10.0;     ///< thrust deviation per actuator unit
  double roll_gain = 0.1;        ///< roll torque per actuator unit
  Eigen::Vector4d actuator_tau{0.1, 0.1, 0.15, 0.1};  ///< first-order lags
  double e_scale = 0.004;
};

/// 17-state rocket with steerable thrust: position (3), velocity (3),
/// attitude quaternion deviation from identity (4), body rates (3) and four
/// first-order actuator states (gimbal x/y, thrust, roll). Inputs command the
/// actuators. The origin is the hover trim.
class RocketModel : public Model {
 public:
  explicit RocketModel(RocketParams p = {});
  Vec f(const Vec& x, const Vec& u) const override;
  Mat E(const Vec& x, const Vec& u) const override;
  Linearization jacobians(const Vec& z, const Vec& v) const override;
  const RocketParams& params() const { return p_; }

 private:
  RocketParams p_;
};

}  // namespace rnmpc
