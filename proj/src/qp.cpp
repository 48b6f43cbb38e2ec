#include "rnmpc/qp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <vector>

namespace rnmpc {
namespace {

constexpr double kEqTol = 1e-12;
constexpr double kRhoMin = 1e-6;
constexpr double kRhoMax = 1e6;
constexpr double kBigBound = 1e29;

SpMat build_kkt(const SpMat& P, double cost_scale, const SpMat& A, double sigma,
                const Vec& rho_inv) {
  const int n = static_cast<int>(P.rows());
  const int m = static_cast<int>(A.rows());
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(P.nonZeros() + 2 * A.nonZeros() + n + m);
  for (int k = 0; k < P.outerSize(); ++k)
    for (SpMat::InnerIterator it(P, k); it; ++it)
      trips.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()),
                         cost_scale * it.value());
  for (int i = 0; i < n; ++i) trips.emplace_back(i, i, sigma);
  for (int k = 0; k < A.outerSize(); ++k)
    for (SpMat::InnerIterator it(A, k); it; ++it) {
      trips.emplace_back(n + static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
      trips.emplace_back(static_cast<int>(it.col()), n + static_cast<int>(it.row()), it.value());
    }
  for (int i = 0; i < m; ++i) trips.emplace_back(n + i, n + i, -rho_inv(i));
  SpMat kkt(n + m, n + m);
  kkt.setFromTriplets(trips.begin(), trips.end());
  return kkt;
}

SpMat sparse_diag(const Vec& d) {
  SpMat m(static_cast<int>(d.size()), static_cast<int>(d.size()));
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(d.size());
  for (int i = 0; i < d.size(); ++i) t.emplace_back(i, i, d(i));
  m.setFromTriplets(t.begin(), t.end());
  return m;
}

}  // namespace

AdmmQp::AdmmQp(SpMat P, Vec q, SpMat A, Vec l, Vec u)
    : P_(std::move(P)), A_(std::move(A)), q_(std::move(q)), l_(std::move(l)), u_(std::move(u)) {
  n_ = static_cast<int>(P_.rows());
  m_ = static_cast<int>(A_.rows());
  require(P_.cols() == n_ && q_.size() == n_, "AdmmQp: bad P/q dims");
  require(A_.cols() == n_ && l_.size() == m_ && u_.size() == m_, "AdmmQp: bad A/l/u dims");
  P_.makeCompressed();
  A_.makeCompressed();
  compute_scaling();
}

void AdmmQp::update_vectors(const Vec& q, const Vec& l, const Vec& u) {
  require(q.size() == n_ && l.size() == m_ && u.size() == m_, "AdmmQp: bad vector dims");
  q_ = q;
  l_ = l;
  u_ = u;
}

void AdmmQp::update_matrices(const SpMat& P, const SpMat& A) {
  require(P.rows() == n_ && A.rows() == m_, "AdmmQp: matrix shape changed");
  P_ = P;
  A_ = A;
  P_.makeCompressed();
  A_.makeCompressed();
  analyzed_ = false;
  compute_scaling();
}

// modified Ruiz equilibration of the stacked [P A'; A 0] data
void AdmmQp::compute_scaling() {
  D_ = Vec::Ones(n_);
  E_ = Vec::Ones(m_);
  Ps_ = P_;
  As_ = A_;
  for (int pass = 0; pass < 12; ++pass) {
    Vec col_norm = Vec::Zero(n_);
    Vec row_norm = Vec::Zero(m_);
    for (int k = 0; k < Ps_.outerSize(); ++k)
      for (SpMat::InnerIterator it(Ps_, k); it; ++it)
        col_norm(it.col()) = std::max(col_norm(it.col()), std::abs(it.value()));
    for (int k = 0; k < As_.outerSize(); ++k)
      for (SpMat::InnerIterator it(As_, k); it; ++it) {
        col_norm(it.col()) = std::max(col_norm(it.col()), std::abs(it.value()));
        row_norm(it.row()) = std::max(row_norm(it.row()), std::abs(it.value()));
      }
    Vec dc(n_), ec(m_);
    for (int i = 0; i < n_; ++i)
      dc(i) = col_norm(i) > 1e-12 ? 1.0 / std::sqrt(col_norm(i)) : 1.0;
    for (int i = 0; i < m_; ++i)
      ec(i) = row_norm(i) > 1e-12 ? 1.0 / std::sqrt(row_norm(i)) : 1.0;
    D_ = D_.cwiseProduct(dc);
    E_ = E_.cwiseProduct(ec);
    SpMat Dm = sparse_diag(dc), Em = sparse_diag(ec);
    Ps_ = Dm * Ps_ * Dm;
    As_ = Em * As_ * Dm;
    double worst = 0.0;
    for (int i = 0; i < n_; ++i) worst = std::max(worst, std::abs(1.0 - dc(i)));
    for (int i = 0; i < m_; ++i) worst = std::max(worst, std::abs(1.0 - ec(i)));
    if (worst < 0.01) break;
  }
  Ps_.makeCompressed();
  As_.makeCompressed();
}

void AdmmQp::build_rho(const QpSettings& s) {
  rho_ = Vec::Constant(m_, s.rho);
  for (int i = 0; i < m_; ++i)
    if (u_(i) - l_(i) < kEqTol) rho_(i) = s.rho * s.rho_eq_scale;
  rho_ = rho_.cwiseMax(kRhoMin).cwiseMin(kRhoMax);
  rho_inv_ = rho_.cwiseInverse();
  rho_base_ = s.rho;
}

void AdmmQp::factorize(double sigma) {
  SpMat kkt = build_kkt(Ps_, cost_scale_, As_, sigma, rho_inv_);
  if (!analyzed_) {
    kkt_.analyzePattern(kkt);
    analyzed_ = true;
  }
  kkt_.factorize(kkt);
  require(kkt_.info() == Eigen::Success, "AdmmQp: KKT factorization failed");
}

QpResult AdmmQp::solve(const QpSettings& settings) {
  return solve_warm(settings, Vec::Zero(n_), Vec::Zero(m_));
}

QpResult AdmmQp::solve_warm(const QpSettings& s, const Vec& x0, const Vec& y0) {
  build_rho(s);
  Vec qs_raw = D_.cwiseProduct(q_);
  cost_scale_ = 1.0 / std::max(1.0, inf_norm(qs_raw));
  factorize(s.sigma);

  Vec qs = cost_scale_ * qs_raw;
  Vec ls(m_), us(m_);
  for (int i = 0; i < m_; ++i) {
    ls(i) = l_(i) <= -kBigBound ? -2e30 : E_(i) * l_(i);
    us(i) = u_(i) >= kBigBound ? 2e30 : E_(i) * u_(i);
  }

  Vec x = x0.cwiseQuotient(D_);
  Vec y = cost_scale_ * y0.cwiseQuotient(E_);
  Vec z = (As_ * x).cwiseMax(ls).cwiseMin(us);
  Vec rhs(n_ + m_), sol(n_ + m_);
  Vec x_prev_chk = x, y_prev_chk = y;
  double rp_prev_chk = 1e300;
  int prim_cert_hits = 0, dual_cert_hits = 0;

  QpResult res;
  int iter = 0;
  for (; iter < s.max_iter; ++iter) {
    rhs.head(n_) = s.sigma * x - qs;
    rhs.tail(m_) = z - rho_inv_.cwiseProduct(y);
    sol = kkt_.solve(rhs);
    const auto x_tilde = sol.head(n_);
    const auto nu = sol.tail(m_);
    Vec z_tilde = z + rho_inv_.cwiseProduct(nu - y);

    Vec x_next = s.alpha * x_tilde + (1.0 - s.alpha) * x;
    Vec z_relax = s.alpha * z_tilde + (1.0 - s.alpha) * z;
    Vec z_next = (z_relax + rho_inv_.cwiseProduct(y)).cwiseMax(ls).cwiseMin(us);
    Vec y_next = y + rho_.cwiseProduct(z_relax - z_next);

    x = x_next;
    z = z_next;
    y = y_next;

    if ((iter + 1) % s.check_interval == 0 || iter + 1 == s.max_iter) {
      // termination on the unscaled residuals
      Vec x_u = D_.cwiseProduct(x);
      Vec y_u = E_.cwiseProduct(y) / cost_scale_;
      Vec ax = A_ * x_u;
      Vec z_u = z.cwiseQuotient(E_);
      Vec px = P_ * x_u;
      Vec aty = A_.transpose() * y_u;
      double rp = 0.0;
      for (int i = 0; i < m_; ++i) {
        double v = std::abs(ax(i) - z_u(i));
        if (v > rp) {
          rp = v;
          res.worst_row = i;
        }
      }
      double rd = inf_norm(Vec(px + q_ + aty));
      double ep = s.eps_abs + s.eps_rel * std::max(inf_norm(ax), inf_norm(z_u));
      double ed = s.eps_abs + s.eps_rel * std::max({inf_norm(px), inf_norm(q_), inf_norm(aty)});
      res.primal_residual = rp;
      res.dual_residual = rd;
      if (rp <= ep && rd <= ed) {
        res.status = QpStatus::optimal;
        ++iter;
        break;
      }

      // infeasibility certificates, armed after the warm-start transient and
      // only while the primal residual stalls
      Vec dy = y - y_prev_chk;
      Vec dx = x - x_prev_chk;
      bool armed = (iter + 1) >= s.cert_min_iter && rp > 0.8 * rp_prev_chk;
      rp_prev_chk = rp;
      if (armed && rp > 10.0 * ep && inf_norm(dy) > 1e-14) {
        Vec dy_u = E_.cwiseProduct(dy);
        double ndy = inf_norm(dy_u);
        double support = 0.0;
        bool valid = ndy > 1e-14;
        for (int i = 0; i < m_ && valid; ++i) {
          if (dy_u(i) > 0) {
            if (u_(i) >= kBigBound) {
              if (dy_u(i) > s.eps_infeas * ndy) valid = false;
            } else {
              support += u_(i) * dy_u(i);
            }
          } else if (dy_u(i) < 0) {
            if (l_(i) <= -kBigBound) {
              if (-dy_u(i) > s.eps_infeas * ndy) valid = false;
            } else {
              support += l_(i) * dy_u(i);
            }
          }
        }
        if (valid && inf_norm(Vec(A_.transpose() * dy_u)) <= s.eps_infeas * ndy &&
            support <= -s.eps_infeas * ndy) {
          if (++prim_cert_hits >= 2) {
            res.status = QpStatus::primal_infeasible;
            res.y = dy_u / ndy;
            res.x = D_.cwiseProduct(x);
            res.iterations = iter + 1;
            return res;
          }
        } else {
          prim_cert_hits = 0;
        }
      }
      if (armed && rd > 10.0 * ed && inf_norm(dx) > 1e-14) {
        Vec dx_u = D_.cwiseProduct(dx);
        double ndx = inf_norm(dx_u);
        if (ndx > 1e-14 && inf_norm(Vec(P_ * dx_u)) <= s.eps_infeas * ndx &&
            q_.dot(dx_u) <= -s.eps_infeas * ndx) {
          bool valid = true;
          Vec adx = A_ * dx_u;
          for (int i = 0; i < m_; ++i) {
            if (adx(i) > s.eps_infeas * ndx && u_(i) < kBigBound) valid = false;
            if (adx(i) < -s.eps_infeas * ndx && l_(i) > -kBigBound) valid = false;
          }
          if (valid && ++dual_cert_hits >= 2) {
            res.status = QpStatus::dual_infeasible;
            res.x = dx_u / ndx;
            res.iterations = iter + 1;
            return res;
          }
          if (!valid) dual_cert_hits = 0;
        }
      }
      x_prev_chk = x;
      y_prev_chk = y;

      if (s.adaptive_rho && (iter + 1) % (s.check_interval * 4) == 0) {
        // balance the scaled residuals
        Vec pcx = cost_scale_ * (Ps_ * x);
        double rp_s = inf_norm(Vec(As_ * x - z));
        double rd_s = inf_norm(Vec(pcx + qs + As_.transpose() * y));
        double nom_p = std::max({inf_norm(Vec(As_ * x)), inf_norm(z), 1e-12});
        double nom_d = std::max(
            {inf_norm(pcx), inf_norm(qs), inf_norm(Vec(As_.transpose() * y)), 1e-12});
        double scale = std::sqrt((rp_s / nom_p) / std::max(rd_s / nom_d, 1e-300));
        if (scale > 5.0 || scale < 0.2) {
          rho_ = (rho_ * scale).cwiseMax(kRhoMin).cwiseMin(kRhoMax);
          rho_inv_ = rho_.cwiseInverse();
          factorize(s.sigma);
        }
      }
    }
  }
  res.x = D_.cwiseProduct(x);
  res.y = E_.cwiseProduct(y) / cost_scale_;
  res.iterations = iter;
  if (res.status != QpStatus::optimal && iter >= s.max_iter) res.status = QpStatus::max_iter;
  if (std::getenv("RNMPC_DEBUG_ADMM") != nullptr)
    std::fprintf(stderr, "admm: n=%d m=%d iters=%d status=%d rp=%.2e rd=%.2e\n", n_, m_, iter,
                 static_cast<int>(res.status), res.primal_residual, res.dual_residual);
  if (s.polish && res.status == QpStatus::optimal) polish(s, res);
  res.objective = 0.5 * res.x.dot(P_ * res.x) + q_.dot(res.x);
  return res;
}

// Snap to the active-set KKT system on the original data; keep the result
// only if it improves the residuals.
void AdmmQp::polish(const QpSettings&, QpResult& res) const {
  std::vector<int> low, up;
  for (int i = 0; i < m_; ++i) {
    if (u_(i) - l_(i) < kEqTol) {
      up.push_back(i);  // equality rows always active
    } else if (res.y(i) < -1e-10) {
      low.push_back(i);
    } else if (res.y(i) > 1e-10) {
      up.push_back(i);
    }
  }
  const int ma = static_cast<int>(low.size() + up.size());
  if (ma == 0) {
    Eigen::SimplicialLDLT<SpMat> pf;
    SpMat preg = P_;
    for (int i = 0; i < n_; ++i) preg.coeffRef(i, i) += 1e-11;
    pf.compute(preg);
    if (pf.info() != Eigen::Success) return;
    Vec xp = pf.solve(Vec(-q_));
    if (inf_norm(Vec(P_ * xp + q_)) < res.dual_residual) {
      res.x = xp;
      res.y.setZero();
      res.polished = true;
    }
    return;
  }

  std::vector<Eigen::Triplet<double>> trips;
  for (int k = 0; k < P_.outerSize(); ++k)
    for (SpMat::InnerIterator it(P_, k); it; ++it)
      trips.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
  for (int i = 0; i < n_; ++i) trips.emplace_back(i, i, 1e-11);
  std::vector<int> rowmap(m_, -1);
  {
    int idx = 0;
    for (int i : low) rowmap[i] = idx++;
    for (int i : up) rowmap[i] = idx++;
  }
  for (int k = 0; k < A_.outerSize(); ++k)
    for (SpMat::InnerIterator it(A_, k); it; ++it) {
      int r = rowmap[static_cast<int>(it.row())];
      if (r >= 0) {
        trips.emplace_back(n_ + r, static_cast<int>(it.col()), it.value());
        trips.emplace_back(static_cast<int>(it.col()), n_ + r, it.value());
      }
    }
  for (int r = 0; r < ma; ++r) trips.emplace_back(n_ + r, n_ + r, -1e-11);

  SpMat kkt(n_ + ma, n_ + ma);
  kkt.setFromTriplets(trips.begin(), trips.end());
  Eigen::SimplicialLDLT<SpMat> fact;
  fact.compute(kkt);
  if (fact.info() != Eigen::Success) return;

  Vec rhs = Vec::Zero(n_ + ma);
  rhs.head(n_) = -q_;
  {
    int idx = 0;
    for (int i : low) rhs(n_ + idx++) = l_(i);
    for (int i : up) rhs(n_ + idx++) = u_(i);
  }
  Vec sol = fact.solve(rhs);
  {
    Vec r = rhs - kkt * sol;
    sol += fact.solve(r);
    r = rhs - kkt * sol;
    sol += fact.solve(r);
  }
  Vec xp = sol.head(n_);
  Vec yp = Vec::Zero(m_);
  {
    int idx = 0;
    for (int i : low) yp(i) = sol(n_ + idx++);
    for (int i : up) yp(i) = sol(n_ + idx++);
  }
  Vec ax = A_ * xp;
  double rp = 0.0;
  for (int i = 0; i < m_; ++i)
    rp = std::max(rp, std::max(ax(i) - u_(i), l_(i) - ax(i)));
  rp = std::max(rp, 0.0);
  double rd = inf_norm(Vec(P_ * xp + q_ + A_.transpose() * yp));
  if (rp <= std::max(res.primal_residual, 1e-10) && rd <= std::max(res.dual_residual, 1e-10)) {
    res.x = xp;
    res.y = yp;
    res.primal_residual = rp;
    res.dual_residual = rd;
    res.polished = true;
  }
}

QpResult solve_qp(const SpMat& P, const Vec& q, const SpMat& A, const Vec& l, const Vec& u,
                  const QpSettings& settings) {
  AdmmQp solver(P, q, A, l, u);
  return solver.solve(settings);
}

}  // namespace rnmpc
