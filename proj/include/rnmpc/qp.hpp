#pragma once

#include <Eigen/Sparse>

#include "rnmpc/types.hpp"

namespace rnmpc {

using SpMat = Eigen::SparseMatrix<double>;

enum class QpStatus { optimal, max_iter, primal_infeasible, dual_infeasible };

struct QpSettings {
  double sigma = 1e-6;        ///< x-regularization of the splitting
  double rho = 0.1;           ///< step size for inequality rows
  double rho_eq_scale = 1e3;  ///< equality rows use rho * rho_eq_scale
  double alpha = 1.6;         ///< over-relaxation
  double eps_abs = 1e-8;
  double eps_rel = 1e-8;
  double eps_infeas = 1e-6;
  int max_iter = 60000;
  int check_interval = 25;
  int cert_min_iter = 200;  ///< infeasibility certificates ignored before this
  bool adaptive_rho = true;
  bool polish = true;
};

struct QpResult {
  QpStatus status = QpStatus::max_iter;
  Vec x;
  Vec y;  ///< row multipliers (positive at upper bound, negative at lower)
  double objective = 0.0;
  int iterations = 0;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  int worst_row = -1;  ///< row attaining the primal residual
  bool polished = false;
};

/// Convex QP  min 0.5 x'Px + q'x  s.t.  l <= Ax <= u  solved by an
/// operator-splitting (ADMM) iteration: a quasi-definite KKT solve followed by
/// projection onto the box [l, u], with over-relaxation, adaptive step size
/// and an optional active-set polish.
///
/// The KKT sparsity is analyzed once at construction; value updates reuse it.
class AdmmQp {
 public:
  AdmmQp(SpMat P, Vec q, SpMat A, Vec l, Vec u);

  /// Replace the vector data (q, l, u) without touching the factorization.
  void update_vectors(const Vec& q, const Vec& l, const Vec& u);
  /// Replace matrix values; the sparsity pattern must be unchanged.
  void update_matrices(const SpMat& P, const SpMat& A);

  QpResult solve(const QpSettings& settings = {});
  QpResult solve_warm(const QpSettings& settings, const Vec& x0, const Vec& y0);

  int num_vars() const { return n_; }
  int num_cons() const { return m_; }

 private:
  void build_rho(const QpSettings& s);
  void factorize(double sigma);
  void compute_scaling();
  void polish(const QpSettings& s, QpResult& res) const;

  SpMat P_, A_;    // original data
  SpMat Ps_, As_;  // Ruiz-equilibrated copies used by the iteration
  Vec q_, l_, u_;
  Vec D_, E_;  // variable and constraint scalings
  double cost_scale_ = 1.0;
  int n_ = 0, m_ = 0;
  Vec rho_;      // per-row step size
  Vec rho_inv_;  // cached reciprocal
  double rho_base_ = 0.1;
  Eigen::SimplicialLDLT<SpMat> kkt_;
  bool analyzed_ = false;
};

/// One-shot convenience wrapper.
QpResult solve_qp(const SpMat& P, const Vec& q, const SpMat& A, const Vec& l, const Vec& u,
                  const QpSettings& settings = {});

}  // namespace rnmpc
