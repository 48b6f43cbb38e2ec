#include "rnmpc/subproblem.hpp"

#include <chrono>
#include <cmath>
#include <ostream>

namespace rnmpc {

ConvexSubproblem build(const Plan& plan, const Model& m, const ErrorBoundParams& err, const Vec& x0,
                       const ConstraintSet& C, const TerminalIngredients* ti, const Mat& Q,
                       const Mat& R, const Mat& P, const SubproblemOptions& opts) {
  const int T = plan.horizon();
  ConvexSubproblem sp;
  sp.T = T;
  sp.nx = plan.nx();
  sp.nu = plan.nu();
  sp.x0 = x0;
  sp.z = plan.z;
  sp.v = plan.v;
  sp.psi_x_ref = plan.psi_x;
  sp.psi_u_ref = plan.psi_u;
  sp.phi_u_ref = plan.Phi;
  sp.tau_ref = plan.tau;
  sp.C = &C;
  sp.ti = ti;
  sp.Q = Q;
  sp.R = R;
  sp.P = P;
  sp.opts = opts;

  sp.jac.resize(T);
  sp.defects.resize(T);
  for (int k = 0; k < T; ++k) {
    sp.jac[k] = m.jacobians(plan.z[k], plan.v[k]);
    sp.defects[k] = m.f(plan.z[k], plan.v[k]) - plan.z[k + 1];
    if (!sp.defects[k].allFinite()) throw std::runtime_error("build: non-finite nominal defect");
  }

  // tangent linearization of sigma in tau around the current tau, exact at
  // the linearization point so a feasible warm start stays feasible; the
  // interval cap keeps the affine model positive and bounds the gap the
  // consistency rebuild has to absorb
  const double delta_cap = opts.tau_trust > 0 ? opts.tau_trust : opts.trust_radius;
  sp.sig0.resize(T);
  sp.sig1.resize(T);
  sp.tau_lo = Vec(T);
  sp.tau_hi = Vec(T);
  for (int j = 0; j < T; ++j) {
    double tbar = plan.tau(j);
    double dl = std::min(delta_cap, 0.5 * tbar + 1e-7);
    sp.tau_lo(j) = std::max(0.0, tbar - dl);
    sp.tau_hi(j) = tbar + dl;
    if (opts.nominal_only) {
      sp.sig0[j] = Vec::Zero(sp.nx);
      sp.sig1[j] = Vec::Zero(sp.nx);
      continue;
    }
    Vec erows = err.e_rows(m, plan.z[j], plan.v[j]);
    sp.sig1[j] = 2.0 * tbar * err.mu;
    sp.sig0[j] = erows - (tbar * tbar) * err.mu;
  }
  if (opts.nominal_only) sp.opts.tau_consistency = false;
  return sp;
}

// ---------------------------------------------------------------------------
// canonical sparse assembly shared by the generic backend and the dump

namespace {

struct Layout {
  int T, nx, nu, nc, nf;
  bool psi, term, tauc, pin_terminal;
  int off_dz, off_dv, off_psix, off_psiu, off_tau, off_phiu, off_phix;
  int off_t, off_tf, off_ax, off_au, off_px, off_pu;
  int total;
  std::vector<int> phiu_col, phix_col;  // per-j block starts
  std::vector<int> t_k;                 // per-k starts for the tightened aux

  Layout(const ConvexSubproblem& sp) {
    T = sp.T;
    nx = sp.nx;
    nu = sp.nu;
    nc = sp.C->count();
    nf = sp.with_terminal() ? sp.ti->n_f() : 0;
    psi = !sp.opts.freeze_psi;
    pin_terminal = sp.with_terminal();
    term = sp.with_terminal() && psi;  // tube rows need the psi variables
    tauc = sp.opts.tau_consistency;

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
    at += T;
    off_phiu = at;
    phiu_col.resize(T + 1, 0);
    for (int j = 0; j < T; ++j) {
      phiu_col[j] = at;
      at += std::max(0, T - 1 - j) * nu * nx;
    }
    off_phix = at;
    phix_col.resize(T + 1, 0);
    for (int j = 0; j < T; ++j) {
      phix_col[j] = at;
      at += std::max(0, T - 1 - j) * nx * nx;  // free blocks k = j+2..T
    }
    off_t = at;
    t_k.resize(T, 0);
    for (int k = 1; k <= T - 1; ++k) {
      t_k[k] = at;
      at += nc * k * nx;
    }
    off_tf = at;
    if (term) at += nf * T * nx;
    off_ax = at;
    if (tauc)
      for (int k = 2; k <= T - 1; ++k) at += (k - 1) * nx * nx;
    off_au = at;
    if (tauc)
      for (int k = 1; k <= T - 1; ++k) at += k * nu * nx;
    off_px = at;
    if (tauc && psi) at += T * nx;
    off_pu = at;
    if (tauc && psi) at += T * nu;
    total = at;
  }

  int dz(int k, int r) const { return off_dz + k * nx + r; }
  int dv(int k, int r) const { return off_dv + k * nu + r; }
  int psix(int k, int r) const { return off_psix + k * nx + r; }
  int psiu(int k, int r) const { return off_psiu + k * nu + r; }
  int tau(int j) const { return off_tau + j; }
  int phiu(int k, int j, int r, int m) const {
    return phiu_col[j] + ((k - j - 1) * nu + r) * nx + m;
  }
  int phix(int k, int j, int r, int m) const {  // k >= j+2
    return phix_col[j] + ((k - j - 2) * nx + r) * nx + m;
  }
  int t_aux(int k, int i, int j, int m) const { return t_k[k] + (i * k + j) * nx + m; }
  int tf_aux(int i, int j, int m) const { return off_tf + (i * T + j) * nx + m; }
  int ax_aux(int k, int j, int r, int m) const {  // k >= 2, j <= k-2
    int base = off_ax;
    for (int kk = 2; kk < k; ++kk) base += (kk - 1) * nx * nx;
    return base + (j * nx + r) * nx + m;
  }
  int au_aux(int k, int j, int r, int m) const {  // k >= 1, j <= k-1
    int base = off_au;
    for (int kk = 1; kk < k; ++kk) base += kk * nu * nx;
    return base + (j * nu + r) * nx + m;
  }
  int px_aux(int k, int r) const { return off_px + k * nx + r; }
  int pu_aux(int k, int r) const { return off_pu + k * nu + r; }
};

struct Assembly {
  std::vector<Eigen::Triplet<double>> Pt, At;
  Vec q;
  std::vector<double> l, u;
  int rows = 0;
  double c0 = 0.0;

  explicit Assembly(int nvars) : q(Vec::Zero(nvars)) {}

  int new_row(double lo, double hi) {
    l.push_back(lo);
    u.push_back(hi);
    return rows++;
  }
  void A(int r, int c, double v) {
    if (v != 0.0) At.emplace_back(r, c, v);
  }
  void shift_row(int r, double delta) {  // move constants to the bounds
    if (l[r] > -1e29) l[r] += delta;
    if (u[r] < 1e29) u[r] += delta;
  }
};

constexpr double kInf = 1e30;

// coefficient of a Phi_x entry (k,j,r,m) in row `row`: either a free variable
// or the tau-affine first sub-diagonal
void add_phix_coeff(Assembly& as, const Layout& L, const ConvexSubproblem& sp, int row, int k,
                    int j, int r, int m, double coeff) {
  if (coeff == 0.0) return;
  if (k == j + 1) {
    if (r == m) {
      as.A(row, L.tau(j), coeff * sp.sig1[j](r));
      as.shift_row(row, -coeff * sp.sig0[j](r));
    }
    return;
  }
  as.A(row, L.phix(k, j, r, m), coeff);
}

struct Assembled {
  Layout L;
  SpMat P, A;
  Vec q, l, u;
  double c0;
};

Assembled assemble(const ConvexSubproblem& sp) {
  Layout L(sp);
  Assembly as(L.total);
  const int T = sp.T, nx = sp.nx, nu = sp.nu;
  const auto& C = *sp.C;

  // --- cost ---------------------------------------------------------------
  // the canonical form is 0.5 x'Px + q'x + c0; a term (z + y)'W(z + y) with
  // variable y split across two blocks contributes 2W to every block pair,
  // 2Wz to each block's linear part and z'Wz to the constant
  auto add_quadratic = [&](const Mat& W, const Vec& ref, auto idx_a, auto idx_b, bool has_b) {
    const int n = static_cast<int>(W.rows());
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c) {
        double w = 2.0 * W(r, c);
        if (w == 0.0) continue;
        as.Pt.emplace_back(idx_a(r), idx_a(c), w);
        if (has_b) {
          as.Pt.emplace_back(idx_b(r), idx_b(c), w);
          as.Pt.emplace_back(idx_a(r), idx_b(c), w);
          as.Pt.emplace_back(idx_b(r), idx_a(c), w);
        }
      }
    Vec lin = 2.0 * W * ref;
    for (int r = 0; r < n; ++r) {
      as.q(idx_a(r)) += lin(r);
      if (has_b) as.q(idx_b(r)) += lin(r);
    }
    as.c0 += ref.dot(W * ref);
  };
  for (int k = 0; k <= T; ++k) {
    const Mat& W = (k == T) ? sp.P : sp.Q;
    add_quadratic(W, sp.z[k], [&](int r) { return L.dz(k, r); },
                  [&](int r) { return L.psix(k, r); }, L.psi);
  }
  for (int k = 0; k < T; ++k)
    add_quadratic(sp.R, sp.v[k], [&](int r) { return L.dv(k, r); },
                  [&](int r) { return L.psiu(k, r); }, L.psi);
  // Phi regularization on the free blocks: rho * entry^2 puts 2*rho on the
  // diagonal of P
  const double rho = sp.opts.rho_reg;
  for (int j = 0; j < T; ++j) {
    for (int k = j + 1; k <= T - 1; ++k)
      for (int r = 0; r < nu; ++r)
        for (int m = 0; m < nx; ++m)
          as.Pt.emplace_back(L.phiu(k, j, r, m), L.phiu(k, j, r, m), 2.0 * rho);
    for (int k = j + 2; k <= T; ++k)
      for (int r = 0; r < nx; ++r)
        for (int m = 0; m < nx; ++m)
          as.Pt.emplace_back(L.phix(k, j, r, m), L.phix(k, j, r, m), 2.0 * rho);
  }

  // --- equalities -----------------------------------------------------------
  // nominal dynamics with multiple-shooting defects
  for (int k = 0; k < T; ++k)
    for (int r = 0; r < nx; ++r) {
      int row = as.new_row(sp.defects[k](r), sp.defects[k](r));
      as.A(row, L.dz(k + 1, r), 1.0);
      for (int c = 0; c < nx; ++c) as.A(row, L.dz(k, c), -sp.jac[k].A(r, c));
      for (int c = 0; c < nu; ++c) as.A(row, L.dv(k, c), -sp.jac[k].B(r, c));
    }
  // initial correction (18c): psi_x_0 + dz_0 = x0 - z_0 (dz_0 alone when psi
  // is frozen)
  for (int r = 0; r < nx; ++r) {
    double rhs = sp.x0(r) - sp.z[0](r);
    int row = as.new_row(rhs, rhs);
    as.A(row, L.dz(0, r), 1.0);
    if (L.psi) as.A(row, L.psix(0, r), 1.0);
  }
  // terminal pin (18d)
  if (L.pin_terminal)
    for (int r = 0; r < nx; ++r) {
      int row = as.new_row(-sp.z[T](r), -sp.z[T](r));
      as.A(row, L.dz(T, r), 1.0);
    }
  // psi dynamics (18f)
  if (L.psi)
    for (int k = 0; k < T; ++k)
      for (int r = 0; r < nx; ++r) {
        int row = as.new_row(0.0, 0.0);
        as.A(row, L.psix(k + 1, r), 1.0);
        for (int c = 0; c < nx; ++c) as.A(row, L.psix(k, c), -sp.jac[k].A(r, c));
        for (int c = 0; c < nu; ++c) as.A(row, L.psiu(k, c), -sp.jac[k].B(r, c));
      }
  // response recursion (16) for the free Phi_x blocks
  for (int j = 0; j < T; ++j)
    for (int k = j + 1; k <= T - 1; ++k)
      for (int r = 0; r < nx; ++r)
        for (int m = 0; m < nx; ++m) {
          int row = as.new_row(0.0, 0.0);
          add_phix_coeff(as, L, sp, row, k + 1, j, r, m, 1.0);
          for (int s = 0; s < nx; ++s)
            add_phix_coeff(as, L, sp, row, k, j, s, m, -sp.jac[k].A(r, s));
          for (int s = 0; s < nu; ++s) as.A(row, L.phiu(k, j, s, m), -sp.jac[k].B(r, s));
        }

  // --- inequalities ----------------------------------------------------------
  // tightened rows (18h) with their epigraph variables
  for (int k = 0; k <= T - 1; ++k)
    for (int i = 0; i < L.nc; ++i) {
      Vec c = C.row(i);
      Vec cx = c.head(nx), cu = c.tail(nu);
      int row = as.new_row(-kInf, -C.offset(i) - cx.dot(sp.z[k]) - cu.dot(sp.v[k]) -
                                      sp.opts.constraint_backoff);
      for (int r = 0; r < nx; ++r) {
        as.A(row, L.dz(k, r), cx(r));
        if (L.psi) as.A(row, L.psix(k, r), cx(r));
      }
      for (int r = 0; r < nu; ++r) {
        as.A(row, L.dv(k, r), cu(r));
        if (L.psi) as.A(row, L.psiu(k, r), cu(r));
      }
      for (int j = 0; j < k; ++j)
        for (int m = 0; m < nx; ++m) {
          as.A(row, L.t_aux(k, i, j, m), 1.0);
          // epigraph rows: |(c' Phi_{k,j})_m| <= t
          for (double sgn : {1.0, -1.0}) {
            int er = as.new_row(-kInf, 0.0);
            for (int r = 0; r < nx; ++r) add_phix_coeff(as, L, sp, er, k, j, r, m, sgn * cx(r));
            for (int r = 0; r < nu; ++r) as.A(er, L.phiu(k, j, r, m), sgn * cu(r));
            as.A(er, L.t_aux(k, i, j, m), -1.0);
          }
        }
    }
  // terminal rows (18i)
  if (L.term)
    for (int i = 0; i < L.nf; ++i) {
      Vec c = sp.ti->Xf_rows.row(i).transpose();
      int row = as.new_row(-kInf, -sp.ti->Xf_offsets(i) - sp.opts.constraint_backoff);
      for (int r = 0; r < nx; ++r)
        if (L.psi) as.A(row, L.psix(T, r), c(r));
      for (int j = 0; j < T; ++j)
        for (int m = 0; m < nx; ++m) {
          as.A(row, L.tf_aux(i, j, m), 1.0);
          for (double sgn : {1.0, -1.0}) {
            int er = as.new_row(-kInf, 0.0);
            for (int r = 0; r < nx; ++r) add_phix_coeff(as, L, sp, er, T, j, r, m, sgn * c(r));
            as.A(er, L.tf_aux(i, j, m), -1.0);
          }
        }
    }
  // tau consistency rows (18j)
  if (L.tauc) {
    for (int k = 0; k <= T - 1; ++k) {
      // state rows
      for (int r = 0; r < nx; ++r) {
        int row = as.new_row(-kInf, 0.0);
        as.A(row, L.tau(k), -1.0);
        if (L.psi) as.A(row, L.px_aux(k, r), 1.0);
        if (k >= 1) {
          // diagonal block contributes sigma_hat_r(tau_{k-1}) directly
          as.A(row, L.tau(k - 1), sp.sig1[k - 1](r));
          as.shift_row(row, -sp.sig0[k - 1](r));
        }
        for (int j = 0; j + 1 < k; ++j)
          for (int m = 0; m < nx; ++m) as.A(row, L.ax_aux(k, j, r, m), 1.0);
      }
      // input rows
      for (int r = 0; r < nu; ++r) {
        int row = as.new_row(-kInf, 0.0);
        as.A(row, L.tau(k), -1.0);
        if (L.psi) as.A(row, L.pu_aux(k, r), 1.0);
        for (int j = 0; j < k; ++j)
          for (int m = 0; m < nx; ++m) as.A(row, L.au_aux(k, j, r, m), 1.0);
      }
    }
    // raw-absolute epigraphs
    for (int k = 2; k <= T - 1; ++k)
      for (int j = 0; j + 1 < k; ++j)
        for (int r = 0; r < nx; ++r)
          for (int m = 0; m < nx; ++m)
            for (double sgn : {1.0, -1.0}) {
              int er = as.new_row(-kInf, 0.0);
              as.A(er, L.phix(k, j, r, m), sgn);
              as.A(er, L.ax_aux(k, j, r, m), -1.0);
            }
    for (int k = 1; k <= T - 1; ++k)
      for (int j = 0; j < k; ++j)
        for (int r = 0; r < nu; ++r)
          for (int m = 0; m < nx; ++m)
            for (double sgn : {1.0, -1.0}) {
              int er = as.new_row(-kInf, 0.0);
              as.A(er, L.phiu(k, j, r, m), sgn);
              as.A(er, L.au_aux(k, j, r, m), -1.0);
            }
    if (L.psi) {
      for (int k = 0; k <= T - 1; ++k) {
        for (int r = 0; r < nx; ++r)
          for (double sgn : {1.0, -1.0}) {
            int er = as.new_row(-kInf, 0.0);
            as.A(er, L.psix(k, r), sgn);
            as.A(er, L.px_aux(k, r), -1.0);
          }
        for (int r = 0; r < nu; ++r)
          for (double sgn : {1.0, -1.0}) {
            int er = as.new_row(-kInf, 0.0);
            as.A(er, L.psiu(k, r), sgn);
            as.A(er, L.pu_aux(k, r), -1.0);
          }
      }
    }
  }
  // tau trust interval
  for (int j = 0; j < T; ++j) {
    int row = as.new_row(sp.tau_lo(j), sp.tau_hi(j));
    as.A(row, L.tau(j), 1.0);
  }
  // nominal trust region
  for (int k = 0; k <= T; ++k)
    for (int r = 0; r < nx; ++r) {
      int row = as.new_row(-sp.opts.trust_radius, sp.opts.trust_radius);
      as.A(row, L.dz(k, r), 1.0);
    }
  for (int k = 0; k < T; ++k)
    for (int r = 0; r < nu; ++r) {
      int row = as.new_row(-sp.opts.trust_radius, sp.opts.trust_radius);
      as.A(row, L.dv(k, r), 1.0);
    }

  Assembled out{L, SpMat(L.total, L.total), SpMat(as.rows, L.total), as.q, Vec(as.rows),
                Vec(as.rows), as.c0};
  out.P.setFromTriplets(as.Pt.begin(), as.Pt.end());
  out.A.setFromTriplets(as.At.begin(), as.At.end());
  for (int i = 0; i < as.rows; ++i) {
    out.l(i) = as.l[i];
    out.u(i) = as.u[i];
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

namespace {

SubproblemSolution extract_solution(const ConvexSubproblem& sp, const Layout& L, const Vec& x) {
  const int T = sp.T, nx = sp.nx, nu = sp.nu;
  SubproblemSolution sol;
  sol.dz.resize(T + 1);
  sol.dv.resize(T);
  sol.psi_x.resize(T + 1);
  sol.psi_u.resize(T);
  for (int k = 0; k <= T; ++k) {
    sol.dz[k] = Vec(nx);
    for (int r = 0; r < nx; ++r) sol.dz[k](r) = x(L.dz(k, r));
    sol.psi_x[k] = Vec::Zero(nx);
    if (L.psi)
      for (int r = 0; r < nx; ++r) sol.psi_x[k](r) = x(L.psix(k, r));
  }
  for (int k = 0; k < T; ++k) {
    sol.dv[k] = Vec(nu);
    for (int r = 0; r < nu; ++r) sol.dv[k](r) = x(L.dv(k, r));
    sol.psi_u[k] = Vec::Zero(nu);
    if (L.psi)
      for (int r = 0; r < nu; ++r) sol.psi_u[k](r) = x(L.psiu(k, r));
  }
  sol.tau = Vec(T);
  for (int j = 0; j < T; ++j) sol.tau(j) = x(L.tau(j));

  sol.Phi = SystemResponse(T, nx, nu);
  for (int j = 0; j < T; ++j)
    for (int k = j + 1; k <= T - 1; ++k)
      for (int r = 0; r < nu; ++r)
        for (int m = 0; m < nx; ++m) sol.Phi.phi_u(k, j)(r, m) = x(L.phiu(k, j, r, m));
  // rebuild Phi_x exactly from the recursion at the solution tau
  std::vector<Vec> sig(T);
  for (int j = 0; j < T; ++j) sig[j] = sp.sigma_hat(j, sol.tau(j));
  propagate_phi(sol.Phi, sp.jac, sig);
  return sol;
}

}  // namespace

double subproblem_objective(const ConvexSubproblem& sp, const SubproblemSolution& sol) {
  double J = 0.0;
  for (int k = 0; k < sp.T; ++k) {
    Vec xs = sp.z[k] + sol.dz[k] + sol.psi_x[k];
    Vec us = sp.v[k] + sol.dv[k] + sol.psi_u[k];
    J += xs.dot(sp.Q * xs) + us.dot(sp.R * us);
  }
  Vec xT = sp.z[sp.T] + sol.dz[sp.T] + sol.psi_x[sp.T];
  J += xT.dot(sp.P * xT);
  double reg = 0.0;
  for (int j = 0; j < sp.T; ++j) {
    reg += sol.Phi.col_u(j).squaredNorm();
    for (int k = j + 2; k <= sp.T; ++k) reg += Mat(sol.Phi.phi_x(k, j)).squaredNorm();
  }
  return J + sp.opts.rho_reg * reg;
}

double subproblem_violation(const ConvexSubproblem& sp, const SubproblemSolution& sol) {
  const int T = sp.T, nx = sp.nx, nu = sp.nu;
  const auto& C = *sp.C;
  double worst = 0.0;
  for (int k = 0; k <= T - 1; ++k)
    for (int i = 0; i < C.count(); ++i) {
      Vec c = C.row(i);
      Vec cx = c.head(nx), cu = c.tail(nu);
      double val = cx.dot(sp.z[k] + sol.dz[k] + sol.psi_x[k]) +
                   cu.dot(sp.v[k] + sol.dv[k] + sol.psi_u[k]) + C.offset(i);
      for (int j = 0; j < k; ++j) {
        Vec row = sol.Phi.phi_x(k, j).transpose() * cx + sol.Phi.phi_u(k, j).transpose() * cu;
        val += row.cwiseAbs().sum();
      }
      worst = std::max(worst, val);
    }
  if (sp.with_terminal()) {
    for (int i = 0; i < sp.ti->n_f(); ++i) {
      Vec c = sp.ti->Xf_rows.row(i).transpose();
      double val = c.dot(sol.psi_x[T]) + sp.ti->Xf_offsets(i);
      for (int j = 0; j < T; ++j) val += (sol.Phi.phi_x(T, j).transpose() * c).cwiseAbs().sum();
      worst = std::max(worst, val);
    }
    worst = std::max(worst, inf_norm(Vec(sp.z[T] + sol.dz[T])));
  }
  if (sp.opts.tau_consistency)
    for (int k = 0; k <= T - 1; ++k) {
      double rn = 0.0;
      for (int r = 0; r < nx; ++r) {
        double s = std::abs(sol.psi_x[k](r));
        for (int j = 0; j < k; ++j) s += sol.Phi.phi_x(k, j).row(r).cwiseAbs().sum();
        rn = std::max(rn, s);
      }
      for (int r = 0; r < nu; ++r) {
        double s = std::abs(sol.psi_u[k](r));
        for (int j = 0; j < k; ++j) s += sol.Phi.phi_u(k, j).row(r).cwiseAbs().sum();
        rn = std::max(rn, s);
      }
      worst = std::max(worst, rn - sol.tau(k));
    }
  return worst;
}

SubproblemSolution solve_generic(const ConvexSubproblem& sp) {
  auto t0 = std::chrono::steady_clock::now();
  Assembled asm_ = assemble(sp);
  AdmmQp solver(asm_.P, asm_.q, asm_.A, asm_.l, asm_.u);
  QpResult res = solver.solve(sp.opts.qp);

  SubproblemSolution sol = extract_solution(sp, asm_.L, res.x.size() ? res.x : Vec::Zero(asm_.L.total));
  sol.iterations = res.iterations;
  switch (res.status) {
    case QpStatus::optimal:
      sol.status = SubproblemStatus::optimal;
      break;
    case QpStatus::primal_infeasible:
      sol.status = SubproblemStatus::infeasible;
      break;
    default:
      sol.status = SubproblemStatus::max_iter;
  }
  sol.objective = subproblem_objective(sp, sol);
  sol.time_qp = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return sol;
}

void dump_subproblem(const ConvexSubproblem& sp, std::ostream& os) {
  Assembled asm_ = assemble(sp);
  os << "rnmpc-subproblem 1\n";
  os << "vars " << asm_.P.rows() << " cons " << asm_.A.rows() << "\n";
  os << "P " << asm_.P.nonZeros() << "\n";
  for (int k = 0; k < asm_.P.outerSize(); ++k)
    for (SpMat::InnerIterator it(asm_.P, k); it; ++it)
      os << it.row() << " " << it.col() << " " << it.value() << "\n";
  os << "q\n";
  for (int i = 0; i < asm_.q.size(); ++i) os << asm_.q(i) << "\n";
  os << "A " << asm_.A.nonZeros() << "\n";
  for (int k = 0; k < asm_.A.outerSize(); ++k)
    for (SpMat::InnerIterator it(asm_.A, k); it; ++it)
      os << it.row() << " " << it.col() << " " << it.value() << "\n";
  os << "l u\n";
  for (int i = 0; i < asm_.l.size(); ++i) os << asm_.l(i) << " " << asm_.u(i) << "\n";
}

}  // namespace rnmpc
