#pragma once

#include "rnmpc/tube.hpp"

namespace rnmpc {

/// Shifted candidate built from an optimal plan and the realized next state;
/// feasible by construction whenever the source plan was.
struct CandidatePlan {
  Plan plan;
  Vec w_bar;          ///< equivalent disturbance, inside the unit ball
  Vec realized_next;  ///< the x(t+1) the candidate was anchored to
};

/// Normalized disturbance that explains the realized next state through the
/// first response block: w_i = (x_next - z_1 - psi_x_1)_i / sigma_i.
/// Throws when sigma is degenerate against a nonzero numerator or when the
/// realized state falls outside the certified one-step tube.
Vec equivalent_disturbance(const Plan& plan, const Vec& x_next, const Model& m,
                           const ErrorBoundParams& err);

/// Appendix-style shifted candidate: nominal and response blocks shifted with
/// the terminal-controller extension, psi corrected by the equivalent
/// disturbance, tau shifted with tau_f in the last slot.
CandidatePlan build_candidate(const Plan& plan, const Vec& x_next, const TerminalIngredients& ti,
                              const Model& m, const ErrorBoundParams& err);

struct CandidateReport {
  PlanCheckReport plan_check;
  double w_bar_norm = 0.0;
  double psi0_residual = 0.0;  ///< candidate anchoring psi_x[0] = x_next - z[0]
  double worst_margin = 0.0;   ///< most violated constraint family (positive = violation)
  bool ok = false;
};

CandidateReport check_candidate(const CandidatePlan& cand, const Model& m,
                                const ErrorBoundParams& err, const ConstraintSet& C,
                                const TerminalIngredients& ti);

/// Diagnostic record of the ISS Lyapunov decrease
///   V_{t+1} - V_t <= -x' Q x + c_l ||w||.
struct IssReport {
  double V_t = 0.0;
  double V_next = 0.0;
  double stage = 0.0;   ///< x(t)' Q x(t)
  double w_norm = 0.0;  ///< infinity norm of the realized disturbance
  double c_l = 0.0;     ///< calibrated slack coefficient
  double slack = 0.0;   ///< c_l * ||w|| - (V_next - V_t + stage); negative = violated
  bool decrease_ok = false;
};

IssReport iss_decrease(double V_t, double V_next, const Vec& x_t, const Vec& w_t, const Mat& Q,
                       double c_l);

}  // namespace rnmpc
