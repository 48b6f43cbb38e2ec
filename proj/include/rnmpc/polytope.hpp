#pragma once

#include <optional>
#include <string>

#include "rnmpc/types.hpp"

namespace rnmpc {

class Model;
struct ErrorBoundParams;

/// Halfspace polytope { y : rows*y + offsets <= 0 } with no dimension split.
struct Polytope {
  Mat rows;
  Vec offsets;

  int count() const { return static_cast<int>(rows.rows()); }
  int dim() const { return static_cast<int>(rows.cols()); }

  /// Exact LP support value max dir'y over the set.
  double support(const Vec& dir) const;
  bool contains(const Vec& y, double tol = 0.0) const;
  bool is_bounded() const;
  bool is_empty() const;
  /// Drop rows implied by the others (one LP per row).
  void prune_redundant(double tol = 1e-9);
};

/// Joint state-input constraint set  c_i'(x,u) + b_i <= 0  with the origin
/// strictly inside; boundedness is verified at construction.
class ConstraintSet {
 public:
  ConstraintSet(Mat rows, Vec offsets, int nx, int nu);

  static ConstraintSet box(const Vec& x_bound, const Vec& u_bound);

  int count() const { return static_cast<int>(rows_.rows()); }
  int nx() const { return nx_; }
  int nu() const { return nu_; }
  int dim() const { return nx_ + nu_; }
  const Mat& rows() const { return rows_; }
  const Vec& offsets() const { return offsets_; }
  Vec row(int i) const { return rows_.row(i).transpose(); }
  double offset(int i) const { return offsets_(i); }

  double support(const Vec& direction) const;
  bool contains(const Vec& x, const Vec& u, double tol = 0.0) const;
  /// Componentwise bounding box, via 2(nx+nu) support calls.
  std::pair<Vec, Vec> bounding_box() const;
  Polytope as_polytope() const { return Polytope{rows_, offsets_}; }

 private:
  Mat rows_;
  Vec offsets_;
  int nx_, nu_;
};

double support(const ConstraintSet& set, const Vec& direction);

struct CostSpec {
  Mat Q;  ///< state stage cost, PD
  Mat R;  ///< input stage cost, PD
  Mat P;  ///< terminal cost, PSD
};

struct TerminalIngredients {
  Mat Xf_rows;    ///< terminal rows c_f' x + b_f <= 0
  Vec Xf_offsets;
  Mat K_f;        ///< terminal feedback gain
  Mat A_cl;       ///< A(0,0) + B(0,0) K_f
  Vec sigma_f;    ///< diagonal of Sigma_f = diag(sigma(0,0,tau_f))
  double tau_f = 0.0;
  Mat P;          ///< terminal cost matrix

  int n_f() const { return static_cast<int>(Xf_rows.rows()); }
  Polytope xf() const { return Polytope{Xf_rows, Xf_offsets}; }
};

struct RpiReport {
  bool rpi_ok = false;
  bool admissible_ok = false;
  bool lyapunov_ok = false;
  bool tau_ok = false;     ///< stored tau_f covers max ||(x, K_f x)||_inf over X_f
  Vec rpi_margins;         ///< per terminal row, >= 0 means satisfied
  Vec admissible_margins;  ///< per constraint row
  double lyapunov_eig = 0.0;  ///< max eigenvalue of the Lyapunov residual
  double tau_margin = 0.0;
  bool ok() const { return rpi_ok && admissible_ok && lyapunov_ok && tau_ok; }
};

struct TerminalSynthOptions {
  int max_rpi_iter = 500;
  int max_fixed_point_iter = 80;
  double set_tol = 1e-9;
  double tau_tol = 1e-8;
  double alpha_target = 1e-4;  ///< geometric-tail inflation target for the RPI set
  int max_order = 400;         ///< cap on the number of accumulation stages
  int orbit_depth = 10;        ///< initial A_cl^T orbit depth of the direction set
  int max_orbit_depth = 40;
};

/// Maximal RPI set of x+ = A_cl x + w, w in diag(sigma) * unit ball, inside
/// the admissible polytope. Backward pre-set recursion in halfspace form with
/// LP redundancy pruning.
Polytope max_rpi_set(const Mat& A_cl, const Vec& sigma_diag, const Polytope& admissible,
                     const TerminalSynthOptions& opts = {});

/// Invariant outer approximation of the minimal RPI set of
/// x+ = A_cl x + w, w in diag(sigma) * unit ball (sigma > 0 componentwise).
/// The disturbance-accumulation zonotope (inflated by the geometric-series
/// tail) is outer-bounded by support halfspaces over a direction set closed
/// under A_cl^T up to a finite depth; invariance of the result is verified
/// and the direction set deepened on demand. Extra seed directions (e.g.
/// constraint rows) are honored exactly.
Polytope min_rpi_outer(const Mat& A_cl, const Vec& sigma_diag,
                       const Mat& seed_dirs = Mat(0, 0),
                       const TerminalSynthOptions& opts = {});

/// Terminal ingredient synthesis: LQR gain, Lyapunov terminal cost, maximal
/// RPI terminal set with the tau_f <-> Sigma_f circularity resolved by a
/// fixed-point alternation.
TerminalIngredients synth_terminal(const Model& m, const Mat& Q, const Mat& R,
                                   const ErrorBoundParams& err, const ConstraintSet& C,
                                   const TerminalSynthOptions& opts = {});

/// Re-checks all TerminalIngredients invariants (RPI inclusion, constraint
/// admissibility, Lyapunov decrease).
RpiReport verify_rpi(const TerminalIngredients& ti, const Model& m, const ErrorBoundParams& err,
                     const ConstraintSet& C, const Mat& Q, const Mat& R);

std::string terminal_to_json(const TerminalIngredients& ti, const std::string& cache_key);
TerminalIngredients terminal_from_json(const std::string& text, const std::string& expected_key);

/// Cache key for terminal synthesis inputs (model + error params + constraints
/// + weights).
std::string terminal_cache_key(const Model& m, const ErrorBoundParams& err,
                               const ConstraintSet& C, const Mat& Q, const Mat& R);

}  // namespace rnmpc
