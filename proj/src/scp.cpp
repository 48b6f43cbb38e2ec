#include "rnmpc/scp.hpp"

#include <cstdio>
#include <cstdlib>
#include <chrono>
#include <cmath>

#include "rnmpc/feasibility_oracle.hpp"
#include "rnmpc/riccati.hpp"

namespace rnmpc {
namespace {

using Clock = std::chrono::steady_clock;

double step_inf_norm(const SubproblemSolution& sol) {
  double s = 0.0;
  for (const Vec& d : sol.dz) s = std::max(s, inf_norm(d));
  for (const Vec& d : sol.dv) s = std::max(s, inf_norm(d));
  return s;
}

}  // namespace

Plan shift_warm_start(const Plan& prev, const TerminalIngredients& ti) {
  const int T = prev.horizon();
  const int nx = prev.nx(), nu = prev.nu();
  require(T >= 2, "shift_warm_start: horizon too short");
  Plan c = Plan::zero(T, nx, nu);

  for (int k = 0; k < T; ++k) c.z[k] = prev.z[k + 1];
  c.z[T] = Vec::Zero(nx);
  for (int k = 0; k < T - 1; ++k) c.v[k] = prev.v[k + 1];
  c.v[T - 1] = Vec::Zero(nu);

  for (int k = 0; k <= T - 1; ++k) c.psi_x[k] = prev.psi_x[k + 1];
  for (int k = 0; k <= T - 2; ++k) c.psi_u[k] = prev.psi_u[k + 1];
  c.psi_u[T - 1] = ti.K_f * c.psi_x[T - 1];
  c.psi_x[T] = ti.A_cl * c.psi_x[T - 1];

  for (int j = 0; j <= T - 2; ++j) {
    for (int k = j + 1; k <= T - 1; ++k) c.Phi.phi_x(k, j) = prev.Phi.phi_x(k + 1, j + 1);
    c.Phi.phi_x(T, j) = ti.A_cl * prev.Phi.phi_x(T, j + 1);
    for (int k = j + 1; k <= T - 2; ++k) c.Phi.phi_u(k, j) = prev.Phi.phi_u(k + 1, j + 1);
    c.Phi.phi_u(T - 1, j) = ti.K_f * prev.Phi.phi_x(T, j + 1);
  }
  c.Phi.phi_x(T, T - 1) = Mat(ti.sigma_f.asDiagonal());

  for (int k = 0; k <= T - 2; ++k) c.tau(k) = prev.tau(k + 1);
  c.tau(T - 1) = prev.tau_T.value_or(ti.tau_f);
  c.tau_T = ti.tau_f;
  return c;
}

RmpcController::RmpcController(const Model& m, ErrorBoundParams err, ConstraintSet C,
                               std::optional<TerminalIngredients> ti, Mat Q, Mat R,
                               ControllerConfig cfg)
    : m_(m), err_(std::move(err)), C_(std::move(C)), ti_(std::move(ti)), Q_(std::move(Q)),
      R_(std::move(R)), cfg_(cfg) {
  if (cfg_.simplified) {
    err_.mu = Vec::Zero(m_.nx());
    cfg_.sub.freeze_psi = true;
    cfg_.sub.terminal_constraints = false;
    ti_.reset();
  }
  if (ti_) {
    P_ = ti_->P;
  } else {
    // Riccati terminal cost from the local LQR, usable without a terminal set
    Linearization lin = m_.jacobians(Vec::Zero(m_.nx()), Vec::Zero(m_.nu()));
    P_ = dare(lin.A, lin.B, Q_, R_).P;
  }
  if (cfg_.mode == ControllerMode::rti) cfg_.sub.rti_single_sweep = true;
  if (!ti_) cfg_.sub.terminal_constraints = false;
}

SubproblemSolution RmpcController::run_backend(const ConvexSubproblem& sp) const {
  return cfg_.use_structured ? solve_structured(sp) : solve_generic(sp);
}

Plan RmpcController::cold_start(const Vec& x) {
  const int T = cfg_.horizon;
  // nominal-only pass: the disturbance terms stay silenced and the plan
  // carries a zero response; an unstable open-loop plant would otherwise blow
  // up the tau fixed point before any feedback exists
  Plan plan = Plan::zero(T, m_.nx(), m_.nu());
  plan.psi_x[0] = x;  // z = 0 start: psi_x0 = x - z0

  SubproblemOptions nom = cfg_.sub;
  nom.tau_consistency = false;
  nom.nominal_only = true;
  nom.rti_single_sweep = false;
  // freezing psi removes the degenerate z/psi split; the nominal pass is then
  // a plain multiple-shooting MPC anchored at the measured state
  nom.freeze_psi = true;
  double trust = cfg_.trust_init;
  for (int it = 0; it < cfg_.max_scp_iter; ++it) {
    nom.trust_radius = trust;
    auto sp = build(plan, m_, err_, x, C_, cfg_.sub.terminal_constraints && ti_ ? &*ti_ : nullptr,
                    Q_, R_, P_, nom);
    auto sol = run_backend(sp);
    if (sol.status == SubproblemStatus::infeasible) {
      trust *= 0.5;
      if (trust < cfg_.trust_min) break;
      continue;
    }
    double worst_defect = 0.0;
    for (int k = 0; k <= T; ++k) plan.z[k] += sol.dz[k];
    for (int k = 0; k < T; ++k) plan.v[k] += sol.dv[k];
    plan.psi_x[0] = x - plan.z[0];
    for (int k = 0; k < T; ++k)
      worst_defect =
          std::max(worst_defect, inf_norm(Vec(plan.z[k + 1] - m_.f(plan.z[k], plan.v[k]))));
    if (step_inf_norm(sol) <= cfg_.step_tol && worst_defect <= 1e-9) break;
  }
  // seed the disturbance feedback with time-varying LQR gains along the
  // nominal trajectory; a constant origin gain need not contract the
  // linearizations away from the origin, and too aggressive a gain can blow
  // up the tau row-norm fixed point through the curvature term
  std::vector<Linearization> jac(T);
  std::vector<Vec> sig(T);
  for (int k = 0; k < T; ++k) {
    jac[k] = m_.jacobians(plan.z[k], plan.v[k]);
    sig[k] = sigma(err_, m_, plan.z[k], plan.v[k], plan.tau(k));
  }
  std::vector<Mat> gains(T);
  {
    std::vector<LqrStage> stages(T);
    for (int k = 0; k < T; ++k) {
      stages[k].A = jac[k].A;
      stages[k].B = jac[k].B;
      stages[k].Qxx = 2.0 * Q_;
      stages[k].Quu = 2.0 * R_;
      stages[k].Qxu = Mat::Zero(m_.nx(), m_.nu());
      stages[k].qx = Vec::Zero(m_.nx());
      stages[k].qu = Vec::Zero(m_.nu());
    }
    LqrTerminalCost tc{2.0 * P_, Vec::Zero(m_.nx())};
    auto policy = riccati_backward(stages, tc);
    gains = policy.K;
  }
  Plan best = plan;
  double best_metric = 1e300;
  for (double gain_scale : {1.0, 0.5, 0.25, 0.1, 0.0}) {
    // iterate tau in gain form, rebuilding the feedback with the refreshed
    // sigma each pass; a frozen response would leave the sigma increments
    // propagating open loop and the fixed point can run away
    Vec tau_seed = Vec::Zero(T);
    SystemResponse phi_fb(T, m_.nx(), m_.nu());
    bool settled = false;
    for (int pass = 0; pass < 80 && !settled; ++pass) {
      for (int k = 0; k < T; ++k)
        sig[k] = sigma(err_, m_, plan.z[k], plan.v[k], tau_seed(k));
      phi_fb.set_zero();
      for (int j = 0; j < T; ++j) {
        Mat phix = Mat(sig[j].asDiagonal());
        for (int k = j + 1; k <= T - 1; ++k) {
          Mat Ks = gain_scale * gains[k];
          phi_fb.phi_u(k, j) = Ks * phix;
          phix = (jac[k].A + jac[k].B * Ks) * phix;
        }
      }
      Plan probe = Plan::zero(T, m_.nx(), m_.nu());
      probe.Phi = phi_fb;
      propagate_phi(probe.Phi, jac, sig);
      settled = true;
      for (int k = 0; k < T; ++k) {
        double rn = tau_norm(probe, k);
        if (rn > tau_seed(k) + 1e-12) {
          tau_seed(k) = rn;
          settled = false;
        }
      }
      if (tau_seed.maxCoeff() > 1e3) break;
    }
    if (std::getenv("RNMPC_DEBUG_SEED") != nullptr)
      std::fprintf(stderr, "seed gain=%.2f settled=%d taumax=%.4g\n", gain_scale, int(settled),
                   tau_seed.maxCoeff());
    if (!settled) continue;
    Plan cand =
        make_consistent_plan(m_, err_, x, plan.z, plan.v, plan.psi_u, phi_fb, tau_seed);
    double worst = 0.0;
    for (int k = 0; k < T; ++k) worst = std::max(worst, tau_norm(cand, k) - cand.tau(k));
    if (std::getenv("RNMPC_DEBUG_SEED") != nullptr)
      std::fprintf(stderr, "   cand taumax=%.4g gap=%.3g\n", cand.tau.maxCoeff(), worst);
    if (!cand.tau.allFinite() || cand.tau.maxCoeff() > 1e3 * (1.0 + tau_seed.maxCoeff())) continue;
    if (worst > 1e-9) continue;  // tau fixed point did not settle for this gain
    for (int k = 0; k < T; ++k)
      for (int i = 0; i < C_.count(); ++i)
        worst = std::max(worst, tightened_value(cand, C_, i, k));
    if (ti_ && cfg_.sub.terminal_constraints)
      for (int i = 0; i < ti_->n_f(); ++i)
        worst = std::max(worst, terminal_tightened_value(cand, *ti_, i));
    if (worst <= 0.0) return cand;
    if (worst < best_metric) {
      best_metric = worst;
      best = cand;
    }
  }
  return best;
}

Plan RmpcController::advance_warm(const Vec& x) {
  if (!prev_plan_) return cold_start(x);
  if (ti_) {
    try {
      return build_candidate(*prev_plan_, x, *ti_, m_, err_).plan;
    } catch (const std::exception&) {
      // realized state escaped the certified tube (model bound violated or
      // plan was not feasible); fall back to the plain shift, re-anchored
    }
    Plan shifted = shift_warm_start(*prev_plan_, *ti_);
    return make_consistent_plan(m_, err_, x, shifted.z, shifted.v, shifted.psi_u, shifted.Phi,
                                shifted.tau, shifted.tau_T);
  }
  // no terminal ingredients: shift with a zero-hold tail
  const Plan& prev = *prev_plan_;
  const int T = prev.horizon();
  std::vector<Vec> z(T + 1), v(T), psi_u(T, Vec::Zero(m_.nu()));
  for (int k = 0; k < T; ++k) z[k] = prev.z[k + 1];
  for (int k = 0; k < T - 1; ++k) v[k] = prev.v[k + 1];
  v[T - 1] = Vec::Zero(m_.nu());
  z[T] = m_.f(z[T - 1], v[T - 1]);
  SystemResponse phi_u(T, m_.nx(), m_.nu());
  for (int j = 0; j <= T - 2; ++j)
    for (int k = j + 1; k <= T - 2; ++k) phi_u.phi_u(k, j) = prev.Phi.phi_u(k + 1, j + 1);
  Vec tau0(T);
  for (int k = 0; k < T - 1; ++k) tau0(k) = prev.tau(k + 1);
  tau0(T - 1) = prev.tau(T - 1);
  if (!cfg_.sub.freeze_psi) {
    std::vector<Vec> psi_u_shift(T, Vec::Zero(m_.nu()));
    for (int k = 0; k < T - 1; ++k) psi_u_shift[k] = prev.psi_u[k + 1];
    psi_u = psi_u_shift;
  }
  return make_consistent_plan(m_, err_, x, z, v, psi_u, phi_u, tau0);
}

ControlResult RmpcController::solve(const Vec& x) {
  require(x.size() == m_.nx(), "solve: state dimension mismatch");
  require(x.allFinite(), "solve: state must be finite");
  auto t0 = Clock::now();

  ControlResult res;
  res.guarantees_downgraded = cfg_.simplified;

  Plan plan = advance_warm(x);
  const TerminalIngredients* ti = cfg_.sub.terminal_constraints && ti_ ? &*ti_ : nullptr;

  PlanCheckOptions copts;
  copts.check_terminal = ti != nullptr;
  copts.check_psi0 = !cfg_.sub.freeze_psi;
  copts.x0 = x;

  auto merit_of = [&](const Plan& p) {
    double J = 0.0;
    for (int k = 0; k < p.horizon(); ++k) {
      Vec xs = p.z[k] + p.psi_x[k];
      Vec us = p.v[k] + p.psi_u[k];
      J += xs.dot(Q_ * xs) + us.dot(R_ * us);
    }
    Vec xT = p.z[p.horizon()] + p.psi_x[p.horizon()];
    J += xT.dot(P_ * xT);
    double reg = 0.0;
    for (int j = 0; j < p.horizon(); ++j) {
      reg += p.Phi.col_u(j).squaredNorm();
      for (int k = j + 2; k <= p.horizon(); ++k) reg += Mat(p.Phi.phi_x(k, j)).squaredNorm();
    }
    J += cfg_.sub.rho_reg * reg;
    double pen = 0.0;
    for (int k = 0; k < p.horizon(); ++k)
      pen += (p.z[k + 1] - m_.f(p.z[k], p.v[k])).cwiseAbs().sum();
    if (ti) pen += p.z[p.horizon()].cwiseAbs().sum();
    for (int k = 0; k < p.horizon(); ++k)
      for (int i = 0; i < C_.count(); ++i)
        pen += std::max(0.0, tightened_value(p, C_, i, k));
    if (ti)
      for (int i = 0; i < ti->n_f(); ++i)
        pen += std::max(0.0, terminal_tightened_value(p, *ti, i));
    for (int k = 0; k < p.horizon(); ++k)
      pen += std::max(0.0, tau_norm(p, k) - p.tau(k));
    return J + cfg_.merit_penalty * pen;
  };

  double trust = cfg_.trust_init;
  double merit = merit_of(plan);
  const int max_iter = cfg_.mode == ControllerMode::rti ? 1 : cfg_.max_scp_iter;
  bool any_infeasible_at_start = false;

  for (int it = 0; it < max_iter; ++it) {
    SubproblemOptions sopts = cfg_.sub;
    sopts.trust_radius = trust;
    auto tb = Clock::now();
    ConvexSubproblem sp = build(plan, m_, err_, x, C_, ti, Q_, R_, P_, sopts);
    res.time_jacobians += std::chrono::duration<double>(Clock::now() - tb).count();
    SubproblemSolution sol = run_backend(sp);
    res.time_riccati += sol.time_riccati;
    res.time_qp += sol.time_qp;

    ScpIteration diag;
    diag.status = sol.status;
    diag.trust_radius = trust;
    diag.objective = sol.objective;
    diag.step_norm = step_inf_norm(sol);

    if (sol.status == SubproblemStatus::infeasible) {
      if (it == 0) {
        any_infeasible_at_start = true;
        res.iterations.push_back(diag);
        break;
      }
      trust *= 0.5;
      res.iterations.push_back(diag);
      if (trust < cfg_.trust_min) break;
      continue;
    }

    std::vector<Vec> z_new(plan.z), v_new(plan.v);
    for (int k = 0; k <= cfg_.horizon; ++k) z_new[k] += sol.dz[k];
    for (int k = 0; k < cfg_.horizon; ++k) v_new[k] += sol.dv[k];
    Plan candidate = make_consistent_plan(m_, err_, x, z_new, v_new, sol.psi_u, sol.Phi, sol.tau,
                                          ti ? std::optional<double>(ti->tau_f) : std::nullopt);

    double merit_new = merit_of(candidate);
    double predicted = merit - sol.objective;
    double actual = merit - merit_new;
    bool accept;
    if (cfg_.mode == ControllerMode::rti) {
      accept = true;  // single pass; safety rests on the final feasibility check
    } else if (predicted <= 1e-14) {
      accept = actual >= -1e-12;
    } else {
      accept = actual / predicted >= cfg_.accept_ratio || actual >= -1e-12;
    }
    diag.accepted = accept;
    res.iterations.push_back(diag);

    if (accept) {
      plan = std::move(candidate);
      merit = merit_new;
      if (predicted > 0 && actual / std::max(predicted, 1e-300) > cfg_.good_ratio)
        trust = std::min(trust * 1.5, cfg_.trust_max);
    } else {
      trust *= 0.5;
      if (trust < cfg_.trust_min) break;
    }
    if (diag.step_norm <= cfg_.step_tol) break;  // converged regardless of the ratio test
  }

  res.check = check_plan(plan, m_, err_, C_, ti, copts);
  res.feasible = res.check.ok && !any_infeasible_at_start;

  if (any_infeasible_at_start && prev_plan_) {
    // theoretically sanctioned fallback: the candidate input of the previous
    // plan stays feasible for every admissible disturbance
    res.used_fallback = true;
    res.plan = plan;
    res.u = plan.v[0] + plan.psi_u[0];
  } else {
    res.plan = plan;
    res.u = plan.v[0] + plan.psi_u[0];
  }
  res.objective = 0.0;
  {
    const Plan& p = res.plan;
    for (int k = 0; k < p.horizon(); ++k) {
      Vec xs = p.z[k] + p.psi_x[k];
      Vec us = p.v[k] + p.psi_u[k];
      res.objective += xs.dot(Q_ * xs) + us.dot(R_ * us);
    }
    Vec xT = p.z[p.horizon()] + p.psi_x[p.horizon()];
    res.objective += xT.dot(P_ * xT);
  }
  prev_plan_ = res.plan;
  res.time_total = std::chrono::duration<double>(Clock::now() - t0).count();
  return res;
}

}  // namespace rnmpc
