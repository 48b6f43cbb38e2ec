#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <memory>

#include "rnmpc/riccati.hpp"
#include "rnmpc/subproblem.hpp"

namespace rnmpc {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

constexpr double kInf = 1e30;

// Affine-in-tau decomposition of the state response blocks of one column:
// Phi_x[k][j] = Gc[k-j-1] + Gs[k-j-1] * tau_j with the feedback blocks frozen.
struct ColumnAffine {
  std::vector<Mat> Gc, Gs;
};

// Nominal-plus-psi-plus-tau QP. The response enters through constants and
// sign-frozen tau slopes, so the matrix values change every sweep while the
// variable layout stays fixed.
struct NominalQp {
  const ConvexSubproblem& sp;
  int T, nx, nu, nc, nf;
  bool psi, term, pin_terminal, tauc;
  int off_dz, off_dv, off_psix, off_psiu, off_tau, total;

  SpMat P;
  Vec q;
  std::unique_ptr<AdmmQp> solver;
  Vec x_warm, y_warm;
  bool have_warm = false;

  int rows = 0;
  std::vector<int> tight_row;  // (k * nc + i)
  std::vector<int> term_row;   // i
  std::vector<int> taux_row;   // (k * nx + r); the paired row is +1
  std::vector<int> tauu_row;   // (k * nu + r); the paired row is +1

  int dz(int k, int r) const { return off_dz + k * nx + r; }
  int dv(int k, int r) const { return off_dv + k * nu + r; }
  int psix(int k, int r) const { return off_psix + k * nx + r; }
  int psiu(int k, int r) const { return off_psiu + k * nu + r; }
  int tau(int j) const { return off_tau + j; }

  explicit NominalQp(const ConvexSubproblem& s) : sp(s) {
    T = sp.T;
    nx = sp.nx;
    nu = sp.nu;
    nc = sp.C->count();
    psi = !sp.opts.freeze_psi;
    pin_terminal = sp.with_terminal();
    term = sp.with_terminal() && psi;
    tauc = sp.opts.tau_consistency;
    nf = term ? sp.ti->n_f() : 0;

    int at = 0;
    off_dz = at;
    at += (T + 1) * nx;
    off_dv = at;
    at += T * nu;
    off_psix = at;
    if (psi) at += (T + 1) * nx;
    off_psiu = at;
    if (psi) at += T * nu;
    off_tau = at;
    at += T;  // tau joins the nominal stage so the sigma-coupled rows can move
    total = at;

    std::vector<Eigen::Triplet<double>> Pt;
    q = Vec::Zero(total);
    auto add_quadratic = [&](const Mat& W, const Vec& ref, auto ia, auto ib, bool has_b) {
      const int n = static_cast<int>(W.rows());
      for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) {
          double w = 2.0 * W(r, c);
          if (w == 0.0) continue;
          Pt.emplace_back(ia(r), ia(c), w);
          if (has_b) {
            Pt.emplace_back(ib(r), ib(c), w);
            Pt.emplace_back(ia(r), ib(c), w);
            Pt.emplace_back(ib(r), ia(c), w);
          }
        }
      Vec lin = 2.0 * W * ref;
      for (int r = 0; r < n; ++r) {
        q(ia(r)) += lin(r);
        if (has_b) q(ib(r)) += lin(r);
      }
    };
    for (int k = 0; k <= T; ++k) {
      const Mat& W = (k == T) ? sp.P : sp.Q;
      add_quadratic(W, sp.z[k], [&](int r) { return dz(k, r); },
                    [&](int r) { return psix(k, r); }, psi);
    }
    for (int k = 0; k < T; ++k)
      add_quadratic(sp.R, sp.v[k], [&](int r) { return dv(k, r); },
                    [&](int r) { return psiu(k, r); }, psi);
    P = SpMat(total, total);
    P.setFromTriplets(Pt.begin(), Pt.end());
  }

  // response-derived data: values at the current tau plus sign-frozen slopes
  struct Consts {
    std::vector<double> M;
    std::vector<Vec> M_slope;
    std::vector<double> Mf;
    std::vector<Vec> Mf_slope;
    std::vector<double> Rx, Ru;
    std::vector<Vec> Rx_slope;
    Vec tau_ref;
  };

  QpResult solve(const Consts& cs) {
    std::vector<Eigen::Triplet<double>> At;
    std::vector<double> lv, uv;
    rows = 0;
    auto new_row = [&](double lo, double hi) {
      lv.push_back(lo);
      uv.push_back(hi);
      return rows++;
    };
    auto addA = [&](int r, int c, double v) {
      if (v != 0.0) At.emplace_back(r, c, v);
    };

    for (int k = 0; k < T; ++k)
      for (int r = 0; r < nx; ++r) {
        int row = new_row(sp.defects[k](r), sp.defects[k](r));
        addA(row, dz(k + 1, r), 1.0);
        for (int c = 0; c < nx; ++c) addA(row, dz(k, c), -sp.jac[k].A(r, c));
        for (int c = 0; c < nu; ++c) addA(row, dv(k, c), -sp.jac[k].B(r, c));
      }
    for (int r = 0; r < nx; ++r) {
      double rhs = sp.x0(r) - sp.z[0](r);
      int row = new_row(rhs, rhs);
      addA(row, dz(0, r), 1.0);
      if (psi) addA(row, psix(0, r), 1.0);
    }
    if (pin_terminal)
      for (int r = 0; r < nx; ++r) {
        int row = new_row(-sp.z[T](r), -sp.z[T](r));
        addA(row, dz(T, r), 1.0);
      }
    if (psi)
      for (int k = 0; k < T; ++k)
        for (int r = 0; r < nx; ++r) {
          int row = new_row(0.0, 0.0);
          addA(row, psix(k + 1, r), 1.0);
          for (int c = 0; c < nx; ++c) addA(row, psix(k, c), -sp.jac[k].A(r, c));
          for (int c = 0; c < nu; ++c) addA(row, psiu(k, c), -sp.jac[k].B(r, c));
        }

    tight_row.assign(T * nc, -1);
    for (int k = 0; k < T; ++k)
      for (int i = 0; i < nc; ++i) {
        Vec c = sp.C->row(i);
        const Vec& slope = cs.M_slope[k * nc + i];
        double shift = slope.size() ? slope.dot(cs.tau_ref.head(slope.size())) : 0.0;
        double ub = -sp.C->offset(i) - c.head(nx).dot(sp.z[k]) - c.tail(nu).dot(sp.v[k]) -
                    sp.opts.constraint_backoff - cs.M[k * nc + i] + shift;
        int row = new_row(-kInf, ub);
        tight_row[k * nc + i] = row;
        for (int r = 0; r < nx; ++r) {
          addA(row, dz(k, r), c(r));
          if (psi) addA(row, psix(k, r), c(r));
        }
        for (int r = 0; r < nu; ++r) {
          addA(row, dv(k, r), c(nx + r));
          if (psi) addA(row, psiu(k, r), c(nx + r));
        }
        for (int j = 0; j < slope.size(); ++j) addA(row, tau(j), slope(j));
      }
    term_row.assign(nf, -1);
    for (int i = 0; i < nf; ++i) {
      const Vec& slope = cs.Mf_slope[i];
      double shift = slope.dot(cs.tau_ref);
      int row =
          new_row(-kInf, -sp.ti->Xf_offsets(i) - sp.opts.constraint_backoff - cs.Mf[i] + shift);
      term_row[i] = row;
      for (int r = 0; r < nx; ++r) addA(row, psix(T, r), sp.ti->Xf_rows(i, r));
      for (int j = 0; j < T; ++j) addA(row, tau(j), slope(j));
    }
    if (tauc) {
      taux_row.assign(T * nx, -1);
      tauu_row.assign(T * nu, -1);
      for (int k = 0; k < T; ++k) {
        for (int r = 0; r < nx; ++r) {
          const Vec& slope = cs.Rx_slope[k * nx + r];
          double shift = slope.size() ? slope.dot(cs.tau_ref.head(slope.size())) : 0.0;
          double ub = -cs.Rx[k * nx + r] + shift;
          for (double sgn : {1.0, -1.0}) {
            int row = new_row(-kInf, ub);
            if (sgn > 0) taux_row[k * nx + r] = row;
            if (psi) addA(row, psix(k, r), sgn);
            addA(row, tau(k), -1.0);
            for (int j = 0; j < slope.size(); ++j) addA(row, tau(j), slope(j));
          }
        }
        for (int r = 0; r < nu; ++r) {
          // the feedback blocks are frozen in this phase: no tau slope here
          double ub = -cs.Ru[k * nu + r];
          for (double sgn : {1.0, -1.0}) {
            int row = new_row(-kInf, ub);
            if (sgn > 0) tauu_row[k * nu + r] = row;
            if (psi) addA(row, psiu(k, r), sgn);
            addA(row, tau(k), -1.0);
          }
        }
      }
    }
    for (int j = 0; j < T; ++j) {
      int row = new_row(sp.tau_lo(j), sp.tau_hi(j));
      addA(row, tau(j), 1.0);
    }
    for (int k = 0; k <= T; ++k)
      for (int r = 0; r < nx; ++r) {
        int row = new_row(-sp.opts.trust_radius, sp.opts.trust_radius);
        addA(row, dz(k, r), 1.0);
      }
    for (int k = 0; k < T; ++k)
      for (int r = 0; r < nu; ++r) {
        int row = new_row(-sp.opts.trust_radius, sp.opts.trust_radius);
        addA(row, dv(k, r), 1.0);
      }

    SpMat A(rows, total);
    A.setFromTriplets(At.begin(), At.end());
    Vec l(rows), u(rows);
    bool trivially_infeasible = false;
    for (int i = 0; i < rows; ++i) {
      l(i) = lv[i];
      u(i) = uv[i];
      if (u(i) < l(i) - 1e-12 || u(i) < -1e8) trivially_infeasible = true;
    }
    if (trivially_infeasible) {
      QpResult res;
      res.status = QpStatus::primal_infeasible;
      return res;
    }
    if (!solver) {
      solver = std::make_unique<AdmmQp>(P, q, A, l, u);
    } else {
      solver->update_matrices(P, A);
      solver->update_vectors(q, l, u);
    }
    QpSettings settings = sp.opts.qp;
    settings.polish = true;
    QpResult res = have_warm && x_warm.size() == total && y_warm.size() == rows
                       ? solver->solve_warm(settings, x_warm, y_warm)
                       : solver->solve(settings);
    if (res.status == QpStatus::optimal) {
      x_warm = res.x;
      y_warm = res.y;
      have_warm = true;
    }
    if (std::getenv("RNMPC_DEBUG_QP") != nullptr)
      std::fprintf(stderr, "nominal qp: status=%d iters=%d rp=%.3e rd=%.3e rows=%d vars=%d\n",
                   static_cast<int>(res.status), res.iterations, res.primal_residual,
                   res.dual_residual, rows, total);
    return res;
  }
};

}  // namespace

SubproblemSolution solve_structured(const ConvexSubproblem& sp) {
  const int T = sp.T, nx = sp.nx, nu = sp.nu;
  const int nc = sp.C->count();
  const bool psi = !sp.opts.freeze_psi;
  const bool term = sp.with_terminal() && psi;
  const int nf = term ? sp.ti->n_f() : 0;
  const double rho = sp.opts.rho_reg;
  const double kappa = sp.opts.prox_weight;
  const double delta = sp.opts.irls_floor;

  SubproblemSolution sol;
  sol.dz.assign(T + 1, Vec::Zero(nx));
  sol.dv.assign(T, Vec::Zero(nu));
  sol.psi_x = psi ? sp.psi_x_ref : std::vector<Vec>(T + 1, Vec::Zero(nx));
  sol.psi_u = psi ? sp.psi_u_ref : std::vector<Vec>(T, Vec::Zero(nu));
  sol.tau = sp.tau_ref.cwiseMax(sp.tau_lo).cwiseMin(sp.tau_hi);
  sol.Phi = SystemResponse(T, nx, nu);
  for (int j = 0; j < T; ++j) sol.Phi.col_u(j) = sp.phi_u_ref.col_u(j);

  auto repropagate = [&]() {
    std::vector<Vec> sig(T);
    for (int j = 0; j < T; ++j) sig[j] = sp.sigma_hat(j, sol.tau(j));
    propagate_phi(sol.Phi, sp.jac, sig);
  };
  repropagate();

  auto refresh_tau = [&]() {
    for (int pass = 0; pass < 4; ++pass) {
      bool moved = false;
      for (int k = 0; k < T; ++k) {
        double rn = 0.0;
        for (int r = 0; r < nx; ++r) {
          double s = psi ? std::abs(sol.psi_x[k](r)) : 0.0;
          for (int j = 0; j < k; ++j) s += sol.Phi.phi_x(k, j).row(r).cwiseAbs().sum();
          rn = std::max(rn, s);
        }
        for (int r = 0; r < nu; ++r) {
          double s = psi ? std::abs(sol.psi_u[k](r)) : 0.0;
          for (int j = 0; j < k; ++j) s += sol.Phi.phi_u(k, j).row(r).cwiseAbs().sum();
          rn = std::max(rn, s);
        }
        double next = std::min(std::max(rn, sp.tau_lo(k)), sp.tau_hi(k));
        if (std::abs(next - sol.tau(k)) > 1e-14) moved = true;
        sol.tau(k) = next;
      }
      repropagate();
      if (!moved) break;
    }
  };
  if (sp.opts.tau_consistency) refresh_tau();

  NominalQp qp(sp);

  std::vector<double> lam(T * nc, 0.0), lam_f(nf, 0.0);
  std::vector<double> eta_x(T * nx, 0.0), eta_u(T * nu, 0.0);
  const double blend = sp.opts.multiplier_blend;

  std::vector<ColumnAffine> cols(T);
  auto decompose_columns = [&]() {
    for (int j = 0; j < T; ++j) {
      ColumnAffine& ca = cols[j];
      ca.Gc.assign(T - j, Mat());
      ca.Gs.assign(T - j, Mat());
      ca.Gc[0] = Mat(sp.sig0[j].asDiagonal());
      ca.Gs[0] = Mat(sp.sig1[j].asDiagonal());
      for (int k = j + 1; k <= T - 1; ++k) {
        ca.Gc[k - j] = sp.jac[k].A * ca.Gc[k - j - 1] + sp.jac[k].B * sol.Phi.phi_u(k, j);
        ca.Gs[k - j] = sp.jac[k].A * ca.Gs[k - j - 1];
      }
    }
  };

  auto fill_consts = [&](NominalQp::Consts& cs) {
    decompose_columns();
    cs.tau_ref = sol.tau;
    cs.M.assign(T * nc, 0.0);
    cs.M_slope.assign(T * nc, Vec());
    cs.Mf.assign(nf, 0.0);
    cs.Mf_slope.assign(nf, Vec::Zero(T));
    cs.Rx.assign(T * nx, 0.0);
    cs.Rx_slope.assign(T * nx, Vec());
    cs.Ru.assign(T * nu, 0.0);
    for (int k = 0; k < T; ++k) {
      for (int i = 0; i < nc; ++i) {
        Vec c = sp.C->row(i);
        Vec cx = c.head(nx), cu = c.tail(nu);
        Vec slope = Vec::Zero(k);
        double val = 0.0;
        for (int j = 0; j < k; ++j) {
          Vec es = cols[j].Gs[k - j - 1].transpose() * cx;
          Vec e = cols[j].Gc[k - j - 1].transpose() * cx + sol.tau(j) * es +
                  sol.Phi.phi_u(k, j).transpose() * cu;
          for (int mm = 0; mm < nx; ++mm) {
            val += std::abs(e(mm));
            slope(j) += (e(mm) > 0 ? 1.0 : (e(mm) < 0 ? -1.0 : 0.0)) * es(mm);
          }
        }
        cs.M[k * nc + i] = val;
        cs.M_slope[k * nc + i] = slope;
      }
      for (int r = 0; r < nx; ++r) {
        Vec slope = Vec::Zero(k);
        double val = 0.0;
        for (int j = 0; j < k; ++j)
          for (int mm = 0; mm < nx; ++mm) {
            double entry = cols[j].Gc[k - j - 1](r, mm) + cols[j].Gs[k - j - 1](r, mm) * sol.tau(j);
            val += std::abs(entry);
            slope(j) += (entry > 0 ? 1.0 : (entry < 0 ? -1.0 : 0.0)) * cols[j].Gs[k - j - 1](r, mm);
          }
        cs.Rx[k * nx + r] = val;
        cs.Rx_slope[k * nx + r] = slope;
      }
      for (int r = 0; r < nu; ++r) {
        double val = 0.0;
        for (int j = 0; j < k; ++j) val += sol.Phi.phi_u(k, j).row(r).cwiseAbs().sum();
        cs.Ru[k * nu + r] = val;
      }
    }
    for (int i = 0; i < nf; ++i) {
      Vec c = sp.ti->Xf_rows.row(i).transpose();
      Vec slope = Vec::Zero(T);
      double val = 0.0;
      for (int j = 0; j < T; ++j) {
        Vec es = cols[j].Gs[T - j - 1].transpose() * c;
        Vec e = cols[j].Gc[T - j - 1].transpose() * c + sol.tau(j) * es;
        for (int mm = 0; mm < nx; ++mm) {
          val += std::abs(e(mm));
          slope(j) += (e(mm) > 0 ? 1.0 : (e(mm) < 0 ? -1.0 : 0.0)) * es(mm);
        }
      }
      cs.Mf[i] = val;
      cs.Mf_slope[i] = slope;
    }
  };

  auto tight_const = [&](int k, int i) {
    Vec c = sp.C->row(i);
    Vec cx = c.head(nx), cu = c.tail(nu);
    double M = 0.0;
    for (int j = 0; j < k; ++j) {
      Vec row = sol.Phi.phi_x(k, j).transpose() * cx + sol.Phi.phi_u(k, j).transpose() * cu;
      M += row.cwiseAbs().sum();
    }
    return M;
  };
  auto term_const = [&](int i) {
    Vec c = sp.ti->Xf_rows.row(i).transpose();
    double M = 0.0;
    for (int j = 0; j < T; ++j) M += (sol.Phi.phi_x(T, j).transpose() * c).cwiseAbs().sum();
    return M;
  };

  auto riccati_pass = [&](const std::vector<double>& lam_eff, const std::vector<double>& lamf_eff) {
    for (int j = 0; j <= T - 2; ++j) {
      Vec sig_j = sp.sigma_hat(j, sol.tau(j));
      // the absolute-value majorizer needs a floor matched to the response
      // scale, otherwise near-zero entries stay clamped at zero
      const double floor_j = std::max(delta, 1e-3 * sig_j.cwiseAbs().maxCoeff());
      for (int mcol = 0; mcol < nx; ++mcol) {
        const int stages_n = T - (j + 1);
        std::vector<LqrStage> stages(stages_n);
        for (int k = j + 1; k <= T - 1; ++k) {
          LqrStage& st = stages[k - (j + 1)];
          st.A = sp.jac[k].A;
          st.B = sp.jac[k].B;
          double rx = (k >= j + 2 ? rho : 0.0) + kappa;
          st.Qxx = 2.0 * rx * Mat::Identity(nx, nx);
          st.Quu = 2.0 * (rho + kappa) * Mat::Identity(nu, nu);
          st.Qxu = Mat::Zero(nx, nu);
          st.qx = k >= j + 2 ? Vec(-2.0 * kappa * sol.Phi.phi_x(k, j).col(mcol)) : Vec::Zero(nx);
          st.qu = -2.0 * kappa * sol.Phi.phi_u(k, j).col(mcol);
          for (int i = 0; i < nc; ++i) {
            double lam_ik = lam_eff[k * nc + i];
            if (lam_ik <= 0.0) continue;
            Vec c = sp.C->row(i);
            Vec cx = c.head(nx), cu = c.tail(nu);
            double cur =
                cx.dot(sol.Phi.phi_x(k, j).col(mcol)) + cu.dot(sol.Phi.phi_u(k, j).col(mcol));
            double w = lam_ik / (2.0 * std::max(std::abs(cur), floor_j));
            st.Qxx += 2.0 * w * cx * cx.transpose();
            st.Quu += 2.0 * w * cu * cu.transpose();
            st.Qxu += 2.0 * w * cx * cu.transpose();
          }
          if (sp.opts.tau_consistency) {
            for (int r = 0; r < nx; ++r) {
              double price = psi ? eta_x[k * nx + r] : 1e-8;
              if (price <= 0.0) continue;
              double cur = std::abs(sol.Phi.phi_x(k, j)(r, mcol));
              st.Qxx(r, r) += price / std::max(cur, floor_j);
            }
            for (int r = 0; r < nu; ++r) {
              double price = psi ? eta_u[k * nu + r] : 1e-8;
              if (price <= 0.0) continue;
              double cur = std::abs(sol.Phi.phi_u(k, j)(r, mcol));
              st.Quu(r, r) += price / std::max(cur, floor_j);
            }
          }
        }
        LqrTerminalCost tc;
        tc.Qxx = 2.0 * (rho + kappa) * Mat::Identity(nx, nx);
        tc.qx = -2.0 * kappa * sol.Phi.phi_x(T, j).col(mcol);
        if (term)
          for (int i = 0; i < nf; ++i) {
            if (lamf_eff[i] <= 0.0) continue;
            Vec c = sp.ti->Xf_rows.row(i).transpose();
            double cur = c.dot(sol.Phi.phi_x(T, j).col(mcol));
            double w = lamf_eff[i] / (2.0 * std::max(std::abs(cur), floor_j));
            tc.Qxx += 2.0 * w * c * c.transpose();
          }

        auto policy = riccati_backward(stages, tc);
        Vec x0col = sig_j(mcol) * Vec::Unit(nx, mcol);
        auto [xs, us] = riccati_forward(stages, policy, x0col);
        for (int k = j + 1; k <= T - 1; ++k) sol.Phi.phi_u(k, j).col(mcol) = us[k - (j + 1)];
      }
    }
    repropagate();
    if (sp.opts.tau_consistency) refresh_tau();
  };

  std::vector<Mat> col_u_prev(T);
  double obj_prev = 1e300;
  bool first = true;
  bool retried_cold = false;
  bool stop_after_qp = false;
  int sweeps = 0;
  const int max_sweeps = sp.opts.rti_single_sweep ? 1 : sp.opts.max_sweeps;
  NominalQp::Consts cs;

  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    ++sweeps;
    // ---- phase (i): nominal QP over (dz, dv, psi, tau) ---------------------
    auto t_qp = Clock::now();
    fill_consts(cs);
    QpResult qres = qp.solve(cs);
    int backtracks = 0;
    while (qres.status == QpStatus::primal_infeasible && !first && backtracks < 5) {
      for (int j = 0; j < T; ++j)
        sol.Phi.col_u(j) = 0.5 * (sol.Phi.col_u(j) + col_u_prev[j]);
      repropagate();
      if (sp.opts.tau_consistency) refresh_tau();
      fill_consts(cs);
      qres = qp.solve(cs);
      ++backtracks;
    }
    if (qres.status == QpStatus::primal_infeasible && first && !retried_cold) {
      // a poor warm-start response can block the first QP even though the
      // joint problem is feasible; refresh the columns once and retry
      retried_cold = true;
      auto t_ric0 = Clock::now();
      riccati_pass(lam, lam_f);
      sol.time_riccati += seconds_since(t_ric0);
      fill_consts(cs);
      qres = qp.solve(cs);
    }
    sol.time_qp += seconds_since(t_qp);
    if (qres.status == QpStatus::primal_infeasible) {
      if (first) {
        sol.status = SubproblemStatus::infeasible;
        sol.iterations = sweeps;
        sol.objective = subproblem_objective(sp, sol);
        return sol;
      }
      // revert to the last accepted response, whose QP was feasible, and stop
      for (int j = 0; j < T; ++j) sol.Phi.col_u(j) = col_u_prev[j];
      repropagate();
      if (sp.opts.tau_consistency) refresh_tau();
      fill_consts(cs);
      qres = qp.solve(cs);
      if (qres.status != QpStatus::optimal) {
        sol.status = SubproblemStatus::max_iter;
        sol.iterations = sweeps;
        sol.objective = subproblem_objective(sp, sol);
        return sol;
      }
      stop_after_qp = true;
    }

    for (int k = 0; k <= T; ++k)
      for (int r = 0; r < nx; ++r) {
        sol.dz[k](r) = qres.x(qp.dz(k, r));
        if (psi) sol.psi_x[k](r) = qres.x(qp.psix(k, r));
      }
    for (int k = 0; k < T; ++k)
      for (int r = 0; r < nu; ++r) {
        sol.dv[k](r) = qres.x(qp.dv(k, r));
        if (psi) sol.psi_u[k](r) = qres.x(qp.psiu(k, r));
      }
    for (int j = 0; j < T; ++j)
      sol.tau(j) = std::min(std::max(qres.x(qp.tau(j)), sp.tau_lo(j)), sp.tau_hi(j));
    repropagate();

    for (int k = 0; k < T; ++k)
      for (int i = 0; i < nc; ++i) {
        double y = std::max(0.0, qres.y(qp.tight_row[k * nc + i]));
        lam[k * nc + i] = (1 - blend) * lam[k * nc + i] + blend * y;
      }
    for (int i = 0; i < nf; ++i) {
      double y = std::max(0.0, qres.y(qp.term_row[i]));
      lam_f[i] = (1 - blend) * lam_f[i] + blend * y;
    }
    if (sp.opts.tau_consistency && psi) {
      for (int k = 0; k < T; ++k) {
        for (int r = 0; r < nx; ++r) {
          int row = qp.taux_row[k * nx + r];
          double y = std::max(0.0, qres.y(row)) + std::max(0.0, qres.y(row + 1));
          eta_x[k * nx + r] = (1 - blend) * eta_x[k * nx + r] + blend * y;
        }
        for (int r = 0; r < nu; ++r) {
          int row = qp.tauu_row[k * nu + r];
          double y = std::max(0.0, qres.y(row)) + std::max(0.0, qres.y(row + 1));
          eta_u[k * nu + r] = (1 - blend) * eta_u[k * nu + r] + blend * y;
        }
      }
    }

    // ---- phase (ii): per-column Riccati updates ----------------------------
    auto t_ric = Clock::now();
    for (int j = 0; j < T; ++j) col_u_prev[j] = sol.Phi.col_u(j);
    if (!stop_after_qp) {
      // augmented prices: families the refreshed response pushes into
      // violation escalate within the sweep, and the escalation persists
      // (rows binding only through the response never surface in the
      // nominal-QP multipliers)
      std::vector<double> lam_eff = lam, lamf_eff = lam_f;
      double beta = 10.0;
      for (int inner = 0; inner < 3; ++inner) {
        riccati_pass(lam_eff, lamf_eff);
        double worst = 0.0;
        for (int k = 0; k < T; ++k)
          for (int i = 0; i < nc; ++i) {
            Vec c = sp.C->row(i);
            double val = c.head(nx).dot(sp.z[k] + sol.dz[k] + sol.psi_x[k]) +
                         c.tail(nu).dot(sp.v[k] + sol.dv[k] + sol.psi_u[k]) + sp.C->offset(i) +
                         tight_const(k, i);
            if (val > 0.0) {
              lam_eff[k * nc + i] = lam[k * nc + i] + beta * val;
              worst = std::max(worst, val);
            }
          }
        if (term)
          for (int i = 0; i < nf; ++i) {
            Vec c = sp.ti->Xf_rows.row(i).transpose();
            double val = c.dot(sol.psi_x[T]) + sp.ti->Xf_offsets(i) + term_const(i);
            if (val > 0.0) {
              lamf_eff[i] = lam_f[i] + beta * val;
              worst = std::max(worst, val);
            }
          }
        if (worst <= sp.opts.feas_tol) break;
        beta *= 10.0;
      }
      for (int idx = 0; idx < T * nc; ++idx)
        lam[idx] = std::max(lam[idx], std::min(lam_eff[idx], lam[idx] + 10.0 * (1.0 + lam[idx])));
      for (int i = 0; i < nf; ++i)
        lam_f[i] = std::max(lam_f[i], std::min(lamf_eff[i], lam_f[i] + 10.0 * (1.0 + lam_f[i])));

      // feasibility line search between the previous and refreshed response
      std::vector<Mat> col_u_new(T);
      for (int j = 0; j < T; ++j) col_u_new[j] = sol.Phi.col_u(j);
      double gamma = 1.0;
      for (int halvings = 0; halvings <= 12; ++halvings) {
        for (int j = 0; j < T; ++j)
          sol.Phi.col_u(j) = col_u_prev[j] + gamma * (col_u_new[j] - col_u_prev[j]);
        repropagate();
        if (sp.opts.tau_consistency) refresh_tau();
        if (subproblem_violation(sp, sol) <=
            std::max(sp.opts.feas_tol, 10.0 * qres.primal_residual))
          break;
        gamma = halvings == 11 ? 0.0 : 0.5 * gamma;
      }
    }
    sol.time_riccati += seconds_since(t_ric);

    // ---- convergence bookkeeping -------------------------------------------
    double obj = subproblem_objective(sp, sol);
    double viol = subproblem_violation(sp, sol);
    if (std::getenv("RNMPC_DEBUG_SW") != nullptr) {
      double lam_sum = 0, lamf_sum = 0;
      for (double v : lam) lam_sum += v;
      for (double v : lam_f) lamf_sum += v;
      std::fprintf(stderr, "sweep %d: obj=%.8g viol=%.3e lam=%.3g lamf=%.3g phimax=%.4f\n", sweep,
                   obj, viol, lam_sum, lamf_sum, sol.Phi.abs_max());
    }
    first = false;
    if (stop_after_qp) {
      sol.status = SubproblemStatus::max_iter;
      break;
    }
    if (std::abs(obj - obj_prev) <= sp.opts.obj_tol * (1.0 + std::abs(obj)) &&
        viol <= sp.opts.feas_tol) {
      sol.status = SubproblemStatus::optimal;
      break;
    }
    obj_prev = obj;
    if (sp.opts.rti_single_sweep) {
      sol.status =
          viol <= sp.opts.feas_tol ? SubproblemStatus::optimal : SubproblemStatus::max_iter;
      break;
    }
  }
  sol.iterations = sweeps;
  sol.objective = subproblem_objective(sp, sol);
  return sol;
}

}  // namespace rnmpc
