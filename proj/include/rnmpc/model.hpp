#pragma once

#include <memory>
#include <string>

#include "rnmpc/types.hpp"

namespace rnmpc {

class ConstraintSet;

/// Jacobians of the discrete-time transition map at a linearization point.
struct Linearization {
  Mat A;  ///< d f / d x
  Mat B;  ///< d f / d u
};

/// Discrete-time uncertain system  x+ = f(x,u) + E(x,u) w,  ||w||_inf <= 1.
///
/// Implementations provide exact Jacobians of f (analytic, or chain-ruled
/// through the integrator). f(0,0) = 0 is required so the origin is an
/// equilibrium.
class Model {
 public:
  virtual ~Model() = default;

  const std::string& name() const { return name_; }
  int nx() const { return nx_; }
  int nu() const { return nu_; }

  virtual Vec f(const Vec& x, const Vec& u) const = 0;
  virtual Mat E(const Vec& x, const Vec& u) const = 0;
  virtual Linearization jacobians(const Vec& z, const Vec& v) const = 0;

  /// True when E does not depend on (x,u); the error bound machinery only
  /// certifies constant-E models.
  virtual bool constant_E() const { return true; }

 protected:
  Model(std::string name, int nx, int nu) : name_(std::move(name)), nx_(nx), nu_(nu) {}

 private:
  std::string name_;
  int nx_, nu_;
};

/// Curvature bounds for the linearization-error model
///   sigma_i(z, v, tau) = tau^2 mu_i + ||e_i' E(z,v)||_1.
struct ErrorBoundParams {
  Vec mu;                     ///< componentwise curvature bounds, >= 0
  bool bound_validated = true;  ///< false when E is state-dependent
  int samples_used = 0;
  unsigned long long seed_used = 0;

  Vec e_rows(const Model& m, const Vec& z, const Vec& v) const;
};

/// One step of the uncertain dynamics: f(x,u) + E(x,u) w.
Vec step(const Model& m, const Vec& x, const Vec& u, const Vec& w);

/// sigma(z,v,tau) componentwise; requires tau >= 0.
Vec sigma(const ErrorBoundParams& p, const Model& m, const Vec& z, const Vec& v, double tau);

struct CurvatureOptions {
  int exact_sign_limit = 14;  ///< enumerate all sign vectors up to this dim
  int random_signs = 4096;    ///< sampled sign vectors beyond the limit
  double fd_step = 1e-4;
};

/// Sample-based estimate of the curvature bounds mu (finite-difference
/// Hessians over uniform samples of C, exact maximization over the sign
/// vertices of the infinity ball). Deterministic for a fixed seed.
ErrorBoundParams estimate_curvature(const Model& m, const ConstraintSet& C, int n_samples,
                                    unsigned long long seed, const CurvatureOptions& opts = {});

}  // namespace rnmpc
