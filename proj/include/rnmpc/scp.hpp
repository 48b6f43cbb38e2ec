#pragma once

#include <optional>

#include "rnmpc/subproblem.hpp"

namespace rnmpc {

enum class ControllerMode { full_scp, rti };

struct ControllerConfig {
  int horizon = 10;
  ControllerMode mode = ControllerMode::full_scp;
  int max_scp_iter = 30;
  double step_tol = 1e-6;
  double trust_init = 1.0;
  double trust_min = 1e-9;
  double trust_max = 100.0;
  double accept_ratio = 0.01;
  double good_ratio = 0.7;
  double merit_penalty = 1e4;
  bool use_structured = true;  ///< fast path; the generic backend is the reference
  /// Simplified deployment: mu forced to zero, psi frozen, terminal
  /// constraints dropped. Robust tightening stays active but the
  /// recursive-feasibility and ISS guarantees are downgraded.
  bool simplified = false;
  SubproblemOptions sub;
};

struct ScpIteration {
  double objective = 0.0;
  double step_norm = 0.0;
  double trust_radius = 0.0;
  bool accepted = false;
  SubproblemStatus status = SubproblemStatus::max_iter;
};

struct ControlResult {
  bool feasible = false;       ///< final plan passes every tube-module check
  bool used_fallback = false;  ///< subproblem infeasible; candidate input applied
  bool guarantees_downgraded = false;
  Vec u;
  Plan plan;
  double objective = 0.0;  ///< V_t: optimal cost of the returned plan
  PlanCheckReport check;
  std::vector<ScpIteration> iterations;
  double time_jacobians = 0.0;
  double time_riccati = 0.0;
  double time_qp = 0.0;
  double time_total = 0.0;
};

/// Shifted warm start: nominal and response blocks advanced one step with the
/// terminal-controller extension, radii shifted with tau_f appended. The psi
/// trajectories are shifted naively; the disturbance correction is applied
/// separately once the realized state is known.
Plan shift_warm_start(const Plan& prev, const TerminalIngredients& ti);

/// Receding-horizon robust controller: sequential convex programming over the
/// tube-augmented program, candidate-based warm starts and a trust region.
class RmpcController {
 public:
  RmpcController(const Model& m, ErrorBoundParams err, ConstraintSet C,
                 std::optional<TerminalIngredients> ti, Mat Q, Mat R, ControllerConfig cfg);

  ControlResult solve(const Vec& x);
  void reset() { prev_plan_.reset(); }

  const ControllerConfig& config() const { return cfg_; }
  const TerminalIngredients* terminal() const { return ti_ ? &*ti_ : nullptr; }
  const Mat& terminal_cost() const { return P_; }
  const ErrorBoundParams& error_params() const { return err_; }
  const ConstraintSet& constraints() const { return C_; }

 private:
  Plan cold_start(const Vec& x);
  Plan advance_warm(const Vec& x);
  SubproblemSolution run_backend(const ConvexSubproblem& sp) const;

  const Model& m_;
  ErrorBoundParams err_;
  ConstraintSet C_;
  std::optional<TerminalIngredients> ti_;
  Mat Q_, R_, P_;
  ControllerConfig cfg_;
  std::optional<Plan> prev_plan_;
};

}  // namespace rnmpc
