#pragma once

#include <iosfwd>

#include "rnmpc/qp.hpp"
#include "rnmpc/tube.hpp"

namespace rnmpc {

enum class SubproblemStatus { optimal, max_iter, infeasible };

struct SubproblemOptions {
  double rho_reg = 1e-3;        ///< quadratic regularization weight on Phi
  double trust_radius = 1.0;    ///< infinity-norm box on the nominal deviation
  double tau_trust = 0.0;       ///< tau trust radius; 0 derives it from trust_radius
  bool terminal_constraints = true;  ///< (18d) and the terminal tube rows
  bool freeze_psi = false;           ///< simplified mode: psi fixed to zero
  bool tau_consistency = true;       ///< include the row-norm tau rows
  bool nominal_only = false;         ///< cold-start pass: disturbance terms silenced
  double constraint_backoff = 0.0;

  // generic backend
  QpSettings qp;
  // structured backend
  int max_sweeps = 200;
  double obj_tol = 1e-8;
  double feas_tol = 1e-7;
  double multiplier_blend = 0.7;
  double prox_weight = 1e-8;
  double irls_floor = 1e-9;
  bool rti_single_sweep = false;
};

/// Convex approximation of the robust OCP around the current plan: dynamics
/// and response recursion linearized at (z, v), sigma replaced by its tangent
/// in tau over a trust interval (exact at the current tau), 1-norm
/// tightenings kept exact through epigraph variables.
struct ConvexSubproblem {
  int T = 0, nx = 0, nu = 0;
  Vec x0;
  std::vector<Vec> z, v;        ///< linearization trajectory
  std::vector<Vec> psi_x_ref, psi_u_ref;  ///< warm-start values
  SystemResponse phi_u_ref;     ///< warm-start feedback response
  Vec tau_ref;
  std::vector<Linearization> jac;
  std::vector<Vec> defects;     ///< f(z_k, v_k) - z_{k+1}
  std::vector<Vec> sig0, sig1;  ///< sigma_hat_j(tau) = sig0[j] + sig1[j] * tau_j
  Vec tau_lo, tau_hi;
  const ConstraintSet* C = nullptr;
  const TerminalIngredients* ti = nullptr;
  Mat Q, R, P;
  SubproblemOptions opts;

  bool with_terminal() const { return opts.terminal_constraints && ti != nullptr; }
  Vec sigma_hat(int j, double tau) const { return sig0[j] + sig1[j] * tau; }
};

struct SubproblemSolution {
  SubproblemStatus status = SubproblemStatus::max_iter;
  std::vector<Vec> dz, dv;
  std::vector<Vec> psi_x, psi_u;
  SystemResponse Phi;  ///< complete response at the solution tau
  Vec tau;
  double objective = 0.0;  ///< stage+terminal cost plus the Phi regularization
  int iterations = 0;
  double time_riccati = 0.0;  ///< structured backend phase timings [s]
  double time_qp = 0.0;
};

ConvexSubproblem build(const Plan& plan, const Model& m, const ErrorBoundParams& err, const Vec& x0,
                       const ConstraintSet& C, const TerminalIngredients* ti, const Mat& Q,
                       const Mat& R, const Mat& P, const SubproblemOptions& opts = {});

/// Reference backend: the whole program assembled as one sparse QP and solved
/// by the operator-splitting kernel.
SubproblemSolution solve_generic(const ConvexSubproblem& sp);

/// Structure-exploiting backend: alternation of the nominal QP, per-column
/// Riccati updates of the disturbance response weighted by the active
/// tightened constraints' multipliers, and tau refresh from the row norms.
SubproblemSolution solve_structured(const ConvexSubproblem& sp);

/// Objective of a candidate solution under the subproblem's cost definition.
double subproblem_objective(const ConvexSubproblem& sp, const SubproblemSolution& sol);

/// Worst violation of the subproblem's inequality families evaluated at a
/// candidate solution (equalities are rebuilt exactly by construction).
double subproblem_violation(const ConvexSubproblem& sp, const SubproblemSolution& sol);

/// Portable triplet dump of the assembled sparse program (documented format:
/// header, P triplets, q, A triplets, l, u) for offline cross-checks.
void dump_subproblem(const ConvexSubproblem& sp, std::ostream& os);

}  // namespace rnmpc
