#pragma once

#include <optional>
#include <string>
#include <vector>

#include "rnmpc/model.hpp"
#include "rnmpc/polytope.hpp"

namespace rnmpc {

/// Strictly block-lower-triangular system response.
///
/// Phi_x blocks (nx x nx) exist for 0 <= j < k <= T, Phi_u blocks (nu x nx)
/// for 0 <= j < k <= T-1. Storage is contiguous per disturbance column j
/// (the stacked blocks for all k), which is the access order of both the
/// Riccati updates and the row-norm evaluations.
class SystemResponse {
 public:
  SystemResponse() = default;
  SystemResponse(int T, int nx, int nu);

  int horizon() const { return T_; }
  int nx() const { return nx_; }
  int nu() const { return nu_; }

  Eigen::Block<Mat> phi_x(int k, int j);
  Eigen::Block<const Mat> phi_x(int k, int j) const;
  Eigen::Block<Mat> phi_u(int k, int j);
  Eigen::Block<const Mat> phi_u(int k, int j) const;

  /// Stacked x-blocks of column j: rows (k - j - 1)*nx .. for k = j+1..T.
  Mat& col_x(int j) { return col_x_[j]; }
  const Mat& col_x(int j) const { return col_x_[j]; }
  /// Stacked u-blocks of column j for k = j+1..T-1 (may be empty).
  Mat& col_u(int j) { return col_u_[j]; }
  const Mat& col_u(int j) const { return col_u_[j]; }

  void set_zero();
  double abs_max() const;

 private:
  int T_ = 0, nx_ = 0, nu_ = 0;
  std::vector<Mat> col_x_;  // col_x_[j]: ((T-j)*nx) x nx
  std::vector<Mat> col_u_;  // col_u_[j]: ((T-1-j)*nu) x nx
};

/// Full robust plan over one horizon: nominal trajectory, affine corrections,
/// system response and the per-step linearization radii.
struct Plan {
  std::vector<Vec> z;      ///< nominal states, T+1
  std::vector<Vec> v;      ///< nominal inputs, T
  std::vector<Vec> psi_x;  ///< affine state corrections, T+1
  std::vector<Vec> psi_u;  ///< affine input corrections, T
  SystemResponse Phi;
  Vec tau;                      ///< per-step radii, T
  std::optional<double> tau_T;  ///< terminal slot used by the shifted candidate

  int horizon() const { return static_cast<int>(v.size()); }
  int nx() const { return static_cast<int>(z.empty() ? 0 : z[0].size()); }
  int nu() const { return static_cast<int>(v.empty() ? 0 : v[0].size()); }

  static Plan zero(int T, int nx, int nu);
};

/// Zonotopic reachable cross-section: center plus generator blocks acting on
/// unit infinity balls.
struct ReachableSet {
  Vec center;
  std::vector<Mat> generators;

  double support(const Vec& dir) const;
  /// Exact containment test (LP over the generator coefficients).
  bool contains(const Vec& point, double tol = 1e-9) const;
};

/// Fill the Phi_x blocks from the recursion
///   Phi_x[j+1][j] = diag(sigma_seq[j]),
///   Phi_x[k+1][j] = A_k Phi_x[k][j] + B_k Phi_u[k][j],
/// keeping the stored Phi_u blocks fixed.
void propagate_phi(SystemResponse& sr, const std::vector<Linearization>& jac,
                   const std::vector<Vec>& sigma_seq);

ReachableSet reachable_state(const Plan& plan, int k);
ReachableSet reachable_input(const Plan& plan, int k);

/// Tightened value of constraint row i at step k (Eq-style: value <= 0 iff the
/// row holds for every admissible disturbance).
double tightened_value(const Plan& plan, const ConstraintSet& C, int i, int k);

double terminal_tightened_value(const Plan& plan, const TerminalIngredients& ti, int i);

/// Row-sum infinity norm of [Phi_(k), psi_k] over the stacked state/input
/// rows; k = T uses the state rows only.
double tau_norm(const Plan& plan, int k);

struct PlanCheckOptions {
  double eq_tol = 1e-6;      ///< equality-residual tolerance (18b, 18e, 18f, 16)
  double margin_tol = 1e-6;  ///< inequality margin tolerance (18h, 18i, 18j)
  bool check_terminal = true;
  bool check_psi0 = false;  ///< verify psi_x[0] against a given measured state
  Vec x0;
};

struct PlanCheckReport {
  double nominal_dynamics_residual = 0.0;  // (18b)
  double psi_dynamics_residual = 0.0;      // (18f)
  double phi_recursion_residual = 0.0;     // (16)
  double sigma_diag_residual = 0.0;        // (18e)
  double z_terminal_norm = 0.0;            // (18d)
  double psi0_residual = 0.0;              // (18c)
  double worst_tightened = -1e300;         // (18h) max over rows/steps
  double worst_terminal = -1e300;          // (18i)
  double worst_tau_excess = -1e300;        // (18j) max row norm minus tau
  bool ok = false;
};

PlanCheckReport check_plan(const Plan& plan, const Model& m, const ErrorBoundParams& err,
                           const ConstraintSet& C, const TerminalIngredients* ti,
                           const PlanCheckOptions& opts = {});

struct ConsistencyOptions {
  int max_tau_iter = 30;
  double tau_tol = 1e-10;
};

/// Rebuild the derived parts of a plan from its free components: psi_x from
/// psi_x[0] = x0 - z[0] and the psi dynamics, tau from the (18j) row norms,
/// the sigma diagonal and Phi_x from the recursion. The tau <-> sigma
/// circularity is closed by a short fixed-point iteration.
Plan make_consistent_plan(const Model& m, const ErrorBoundParams& err, const Vec& x0,
                          std::vector<Vec> z, std::vector<Vec> v, std::vector<Vec> psi_u,
                          const SystemResponse& phi_u_source, const Vec& tau_init,
                          std::optional<double> tau_T = std::nullopt,
                          const ConsistencyOptions& opts = {});

/// Disturbance-feedback control along a realized trajectory: reconstructs the
/// normalized disturbances from the observed deviations and applies
/// u_k = v_k + psi_u_k + sum_j Phi_u[k][j] w_j.
class TubePolicy {
 public:
  TubePolicy(const Plan& plan, const Model& m, const ErrorBoundParams& err);

  /// Input for step k given the measured state x_k; records the reconstructed
  /// disturbance internally. Call with k = 0, 1, ... in order.
  Vec input(int k, const Vec& x_k);
  const std::vector<Vec>& reconstructed() const { return w_hat_; }

 private:
  const Plan& plan_;
  std::vector<Vec> sigma_seq_;
  std::vector<Vec> w_hat_;
};

std::string plan_to_json(const Plan& plan);
Plan plan_from_json(const std::string& text);

}  // namespace rnmpc
