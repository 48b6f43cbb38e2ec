#pragma once

#include "rnmpc/types.hpp"

namespace rnmpc {

enum class LpStatus { optimal, infeasible, unbounded, iteration_limit };

struct LpResult {
  LpStatus status = LpStatus::iteration_limit;
  double objective = 0.0;  ///< optimal value of max c'x
  Vec x;                   ///< a maximizer (primal solution)
  Vec row_duals;           ///< multipliers of the rows Ax <= b, nonnegative
};

/// Solve  max c'x  s.t.  A x <= b  with free x (dense, small scale).
///
/// Internally runs a two-phase revised simplex on the dual standard form
/// min b'y s.t. A'y = c, y >= 0 with Bland's rule. Statuses:
///   optimal    — finite optimum, x and duals populated
///   unbounded  — objective unbounded above over a nonempty feasible set
///   infeasible — {x : Ax <= b} is empty
LpResult solve_lp(const Mat& A, const Vec& b, const Vec& c, int max_iter = 0);

}  // namespace rnmpc
