#include "rnmpc/lp.hpp"

#include <limits>
#include <vector>

namespace rnmpc {
namespace {

constexpr double kPivotTol = 1e-10;
constexpr double kCostTol = 1e-9;

// min g'y s.t. F y = h, y >= 0, solved by revised simplex with an explicit
// phase-1. F is m x n with m <= n + m_art. Bland's rule throughout.
struct StandardLp {
  Mat F;
  Vec h;
  Vec g;
  int m, n;

  enum class Status { optimal, infeasible, unbounded, iteration_limit };
  Status status = Status::iteration_limit;
  Vec y;    // solution, length n
  Vec pi;   // simplex multipliers of the equality rows at optimum
  double obj = 0.0;

  void solve(int max_iter) {
    m = static_cast<int>(F.rows());
    n = static_cast<int>(F.cols());
    // flip rows so h >= 0; the artificial basis y_art = h is then feasible
    for (int i = 0; i < m; ++i) {
      if (h(i) < 0) {
        h(i) = -h(i);
        F.row(i) = -F.row(i);
      }
    }
    Mat Fx(m, n + m);
    Fx.leftCols(n) = F;
    Fx.rightCols(m) = Mat::Identity(m, m);

    std::vector<int> basis(m);
    for (int i = 0; i < m; ++i) basis[i] = n + i;
    Vec yb = h;

    if (max_iter <= 0) max_iter = 200 * (n + m) + 2000;

    Vec cost1 = Vec::Zero(n + m);
    cost1.tail(m).setOnes();
    auto ph1 = run_simplex(Fx, basis, yb, cost1, /*allow_artificial_entering=*/false, max_iter);
    if (ph1 == Status::iteration_limit) {
      status = Status::iteration_limit;
      return;
    }
    double art_sum = 0.0;
    for (int i = 0; i < m; ++i)
      if (basis[i] >= n) art_sum += yb(i);
    if (art_sum > 1e-7) {
      status = Status::infeasible;
      return;
    }

    Vec cost2 = Vec::Zero(n + m);
    cost2.head(n) = g;
    auto ph2 = run_simplex(Fx, basis, yb, cost2, false, max_iter);
    if (ph2 == Status::unbounded) {
      status = Status::unbounded;
      return;
    }
    if (ph2 == Status::iteration_limit) {
      status = Status::iteration_limit;
      return;
    }
    y = Vec::Zero(n);
    for (int i = 0; i < m; ++i)
      if (basis[i] < n) y(basis[i]) = yb(i);
    obj = g.dot(y);
    // multipliers from the final basis
    Mat B(m, m);
    Vec gb(m);
    for (int i = 0; i < m; ++i) {
      B.col(i) = Fx.col(basis[i]);
      gb(i) = cost2(basis[i]);
    }
    pi = B.transpose().partialPivLu().solve(gb);
    status = Status::optimal;
  }

 private:
  Status run_simplex(const Mat& Fx, std::vector<int>& basis, Vec& yb, const Vec& cost,
                     bool allow_artificial_entering, int max_iter) {
    const int ncols = static_cast<int>(Fx.cols());
    std::vector<char> in_basis(ncols, 0);
    for (int b : basis) in_basis[b] = 1;

    for (int iter = 0; iter < max_iter; ++iter) {
      Mat B(m, m);
      Vec gb(m);
      for (int i = 0; i < m; ++i) {
        B.col(i) = Fx.col(basis[i]);
        gb(i) = cost(basis[i]);
      }
      Eigen::PartialPivLU<Mat> lu(B);
      Vec pi_cur = lu.transpose().solve(gb);

      // Bland: first nonbasic column with negative reduced cost
      int entering = -1;
      const int limit = allow_artificial_entering ? ncols : n;
      for (int j = 0; j < limit; ++j) {
        if (in_basis[j]) continue;
        double red = cost(j) - pi_cur.dot(Fx.col(j));
        if (red < -kCostTol) {
          entering = j;
          break;
        }
      }
      if (entering < 0) return Status::optimal;

      Vec d = lu.solve(Fx.col(entering));
      int leaving = -1;
      double best_ratio = std::numeric_limits<double>::infinity();
      for (int i = 0; i < m; ++i) {
        if (d(i) > kPivotTol) {
          double ratio = yb(i) / d(i);
          if (ratio < best_ratio - 1e-12 ||
              (ratio < best_ratio + 1e-12 && (leaving < 0 || basis[i] < basis[leaving]))) {
            best_ratio = ratio;
            leaving = i;
          }
        }
      }
      if (leaving < 0) return Status::unbounded;

      yb -= best_ratio * d;
      yb(leaving) = best_ratio;
      for (int i = 0; i < m; ++i)
        if (yb(i) < 0) yb(i) = 0;  // clamp roundoff
      in_basis[basis[leaving]] = 0;
      in_basis[entering] = 1;
      basis[leaving] = entering;
    }
    return Status::iteration_limit;
  }
};

}  // namespace

LpResult solve_lp(const Mat& A, const Vec& b, const Vec& c, int max_iter) {
  require(A.rows() == b.size(), "solve_lp: A rows / b size mismatch");
  require(A.cols() == c.size(), "solve_lp: A cols / c size mismatch");

  StandardLp dual;
  dual.F = A.transpose();
  dual.h = c;
  dual.g = b;
  dual.solve(max_iter);

  LpResult res;
  switch (dual.status) {
    case StandardLp::Status::optimal:
      res.status = LpStatus::optimal;
      res.objective = dual.obj;
      res.x = dual.pi;
      res.row_duals = dual.y;
      break;
    case StandardLp::Status::infeasible:
      // dual infeasible with primal feasible => unbounded; we report unbounded
      // and leave emptiness detection to callers that pose a always-feasible LP
      res.status = LpStatus::unbounded;
      break;
    case StandardLp::Status::unbounded:
      res.status = LpStatus::infeasible;
      break;
    default:
      res.status = LpStatus::iteration_limit;
  }
  return res;
}

}  // namespace rnmpc
