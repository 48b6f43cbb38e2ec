#include "rnmpc/feasibility_oracle.hpp"

#include <cmath>

namespace rnmpc {

Vec equivalent_disturbance(const Plan& plan, const Vec& x_next, const Model& m,
                           const ErrorBoundParams& err) {
  require(x_next.size() == plan.nx(), "equivalent_disturbance: state dimension");
  Vec sig = sigma(err, m, plan.z[0], plan.v[0], plan.tau(0));
  Vec numer = x_next - plan.z[1] - plan.psi_x[1];
  Vec w = Vec::Zero(plan.nx());
  for (int i = 0; i < w.size(); ++i) {
    if (sig(i) > 0.0) {
      w(i) = numer(i) / sig(i);
    } else if (std::abs(numer(i)) > 1e-12) {
      throw std::runtime_error("sigma degenerate; bound violated");
    }
  }
  if (inf_norm(w) > 1.0 + 1e-9)
    throw std::runtime_error("realized state outside certified tube");
  return w;
}

CandidatePlan build_candidate(const Plan& plan, const Vec& x_next, const TerminalIngredients& ti,
                              const Model& m, const ErrorBoundParams& err) {
  const int T = plan.horizon();
  const int nx = plan.nx(), nu = plan.nu();
  require(T >= 2, "build_candidate: horizon too short to shift");

  CandidatePlan cand;
  cand.realized_next = x_next;
  cand.w_bar = equivalent_disturbance(plan, x_next, m, err);

  Plan& c = cand.plan;
  c = Plan::zero(T, nx, nu);

  // nominal shift with the terminal append
  for (int k = 0; k < T; ++k) c.z[k] = plan.z[k + 1];
  c.z[T] = Vec::Zero(nx);
  for (int k = 0; k < T - 1; ++k) c.v[k] = plan.v[k + 1];
  c.v[T - 1] = Vec::Zero(nu);

  // psi correction by the equivalent disturbance, terminal controller at the end
  for (int k = 0; k <= T - 1; ++k)
    c.psi_x[k] = plan.psi_x[k + 1] + plan.Phi.phi_x(k + 1, 0) * cand.w_bar;
  for (int k = 0; k <= T - 2; ++k)
    c.psi_u[k] = plan.psi_u[k + 1] + plan.Phi.phi_u(k + 1, 0) * cand.w_bar;
  c.psi_u[T - 1] = ti.K_f * c.psi_x[T - 1];
  c.psi_x[T] = ti.A_cl * c.psi_x[T - 1];

  // block shift of the response, terminal rows through the closed loop
  for (int j = 0; j <= T - 2; ++j) {
    for (int k = j + 1; k <= T - 1; ++k) c.Phi.phi_x(k, j) = plan.Phi.phi_x(k + 1, j + 1);
    c.Phi.phi_x(T, j) = ti.A_cl * plan.Phi.phi_x(T, j + 1);
    for (int k = j + 1; k <= T - 2; ++k) c.Phi.phi_u(k, j) = plan.Phi.phi_u(k + 1, j + 1);
    c.Phi.phi_u(T - 1, j) = ti.K_f * plan.Phi.phi_x(T, j + 1);
  }
  c.Phi.phi_x(T, T - 1) = Mat(ti.sigma_f.asDiagonal());

  // shifted radii with tau_f for the appended step
  for (int k = 0; k <= T - 2; ++k) c.tau(k) = plan.tau(k + 1);
  c.tau(T - 1) = plan.tau_T.value_or(ti.tau_f);
  c.tau_T = ti.tau_f;
  return cand;
}

CandidateReport check_candidate(const CandidatePlan& cand, const Model& m,
                                const ErrorBoundParams& err, const ConstraintSet& C,
                                const TerminalIngredients& ti) {
  CandidateReport rep;
  PlanCheckOptions opts;
  opts.check_terminal = true;
  opts.check_psi0 = true;
  opts.x0 = cand.realized_next;
  rep.plan_check = check_plan(cand.plan, m, err, C, &ti, opts);
  rep.w_bar_norm = inf_norm(cand.w_bar);
  rep.psi0_residual = rep.plan_check.psi0_residual;
  rep.worst_margin = std::max({rep.plan_check.worst_tightened, rep.plan_check.worst_terminal,
                               rep.plan_check.worst_tau_excess});
  rep.ok = rep.plan_check.ok && rep.w_bar_norm <= 1.0 + 1e-9;
  return rep;
}

IssReport iss_decrease(double V_t, double V_next, const Vec& x_t, const Vec& w_t, const Mat& Q,
                       double c_l) {
  IssReport rep;
  rep.V_t = V_t;
  rep.V_next = V_next;
  rep.stage = x_t.dot(Q * x_t);
  rep.w_norm = inf_norm(w_t);
  rep.c_l = c_l;
  rep.slack = c_l * rep.w_norm - (V_next - V_t + rep.stage);
  rep.decrease_ok = rep.slack >= -1e-9;
  return rep;
}

}  // namespace rnmpc
