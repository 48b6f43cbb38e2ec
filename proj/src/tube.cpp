#include "rnmpc/tube.hpp"

#include <cmath>

#include <cstdio>
#include <cstdlib>

#include "json.hpp"
#include "rnmpc/lp.hpp"

namespace rnmpc {

SystemResponse::SystemResponse(int T, int nx, int nu) : T_(T), nx_(nx), nu_(nu) {
  require(T >= 1 && nx >= 1 && nu >= 1, "SystemResponse: bad dimensions");
  col_x_.resize(T);
  col_u_.resize(T);
  for (int j = 0; j < T; ++j) {
    col_x_[j] = Mat::Zero((T - j) * nx, nx);
    col_u_[j] = Mat::Zero(std::max(0, T - 1 - j) * nu, nx);
  }
}

Eigen::Block<Mat> SystemResponse::phi_x(int k, int j) {
  require(j >= 0 && j < k && k <= T_, "phi_x: index out of range");
  return col_x_[j].block((k - j - 1) * nx_, 0, nx_, nx_);
}

Eigen::Block<const Mat> SystemResponse::phi_x(int k, int j) const {
  require(j >= 0 && j < k && k <= T_, "phi_x: index out of range");
  return col_x_[j].block((k - j - 1) * nx_, 0, nx_, nx_);
}

Eigen::Block<Mat> SystemResponse::phi_u(int k, int j) {
  require(j >= 0 && j < k && k <= T_ - 1, "phi_u: index out of range");
  return col_u_[j].block((k - j - 1) * nu_, 0, nu_, nx_);
}

Eigen::Block<const Mat> SystemResponse::phi_u(int k, int j) const {
  require(j >= 0 && j < k && k <= T_ - 1, "phi_u: index out of range");
  return col_u_[j].block((k - j - 1) * nu_, 0, nu_, nx_);
}

void SystemResponse::set_zero() {
  for (auto& c : col_x_) c.setZero();
  for (auto& c : col_u_) c.setZero();
}

double SystemResponse::abs_max() const {
  double m = 0.0;
  for (const auto& c : col_x_)
    if (c.size()) m = std::max(m, c.cwiseAbs().maxCoeff());
  for (const auto& c : col_u_)
    if (c.size()) m = std::max(m, c.cwiseAbs().maxCoeff());
  return m;
}

Plan Plan::zero(int T, int nx, int nu) {
  Plan p;
  p.z.assign(T + 1, Vec::Zero(nx));
  p.v.assign(T, Vec::Zero(nu));
  p.psi_x.assign(T + 1, Vec::Zero(nx));
  p.psi_u.assign(T, Vec::Zero(nu));
  p.Phi = SystemResponse(T, nx, nu);
  p.tau = Vec::Zero(T);
  return p;
}

double ReachableSet::support(const Vec& dir) const {
  double s = dir.dot(center);
  for (const Mat& g : generators) s += (g.transpose() * dir).cwiseAbs().sum();
  return s;
}

bool ReachableSet::contains(const Vec& point, double tol) const {
  const int n = static_cast<int>(center.size());
  if (generators.empty()) return (point - center).cwiseAbs().maxCoeff() <= tol;
  int total = 0;
  for (const Mat& g : generators) total += static_cast<int>(g.cols());
  // feasibility LP: get w with stacked generators * w = point - center,
  // |w_i| <= s, minimizing s; contained iff min s <= 1 + tol
  // variables [w; s]
  const int nv = total + 1;
  Mat A(2 * total + 2 * n, nv);
  Vec b(2 * total + 2 * n);
  A.setZero();
  for (int i = 0; i < total; ++i) {
    A(2 * i, i) = 1.0;
    A(2 * i, total) = -1.0;
    b(2 * i) = 0.0;
    A(2 * i + 1, i) = -1.0;
    A(2 * i + 1, total) = -1.0;
    b(2 * i + 1) = 0.0;
  }
  Mat G(n, total);
  int col = 0;
  for (const Mat& g : generators) {
    G.middleCols(col, g.cols()) = g;
    col += static_cast<int>(g.cols());
  }
  Vec rhs = point - center;
  // G w <= rhs + tol and -G w <= -rhs + tol encoded as inequalities
  A.block(2 * total, 0, n, total) = G;
  b.segment(2 * total, n) = rhs.array() + 1e-12;
  A.block(2 * total + n, 0, n, total) = -G;
  b.segment(2 * total + n, n) = -rhs.array() + 1e-12;
  Vec c = Vec::Zero(nv);
  c(total) = -1.0;  // maximize -s
  auto res = solve_lp(A, b, c);
  if (res.status != LpStatus::optimal) return false;
  return -res.objective <= 1.0 + tol;
}

void propagate_phi(SystemResponse& sr, const std::vector<Linearization>& jac,
                   const std::vector<Vec>& sigma_seq) {
  const int T = sr.horizon();
  require(static_cast<int>(jac.size()) == T, "propagate_phi: need T jacobian pairs");
  require(static_cast<int>(sigma_seq.size()) == T, "propagate_phi: need T sigma vectors");
  for (int j = 0; j < T; ++j) {
    sr.phi_x(j + 1, j) = Mat(sigma_seq[j].asDiagonal());
    for (int k = j + 1; k < T; ++k)
      sr.phi_x(k + 1, j) = jac[k].A * sr.phi_x(k, j) + jac[k].B * sr.phi_u(k, j);
  }
}

ReachableSet reachable_state(const Plan& plan, int k) {
  require(k >= 0 && k <= plan.horizon(), "reachable_state: k out of range");
  ReachableSet rs;
  rs.center = plan.z[k] + plan.psi_x[k];
  for (int j = 0; j < k; ++j) rs.generators.push_back(plan.Phi.phi_x(k, j));
  return rs;
}

ReachableSet reachable_input(const Plan& plan, int k) {
  require(k >= 0 && k <= plan.horizon() - 1, "reachable_input: k out of range");
  ReachableSet rs;
  rs.center = plan.v[k] + plan.psi_u[k];
  for (int j = 0; j < k; ++j) rs.generators.push_back(plan.Phi.phi_u(k, j));
  return rs;
}

double tightened_value(const Plan& plan, const ConstraintSet& C, int i, int k) {
  const int T = plan.horizon();
  require(k >= 0 && k <= T - 1, "tightened_value: k out of range");
  require(i >= 0 && i < C.count(), "tightened_value: row out of range");
  const int nx = plan.nx(), nu = plan.nu();
  Vec c = C.row(i);
  Vec cx = c.head(nx), cu = c.tail(nu);
  double val = cx.dot(plan.z[k] + plan.psi_x[k]) + cu.dot(plan.v[k] + plan.psi_u[k]) + C.offset(i);
  for (int j = 0; j < k; ++j) {
    Vec row = plan.Phi.phi_x(k, j).transpose() * cx;
    if (k <= T - 1) row += plan.Phi.phi_u(k, j).transpose() * cu;
    val += row.cwiseAbs().sum();
  }
  return val;
}

double terminal_tightened_value(const Plan& plan, const TerminalIngredients& ti, int i) {
  const int T = plan.horizon();
  require(i >= 0 && i < ti.n_f(), "terminal_tightened_value: row out of range");
  Vec c = ti.Xf_rows.row(i).transpose();
  double val = c.dot(plan.psi_x[T]) + ti.Xf_offsets(i);
  for (int j = 0; j < T; ++j)
    val += (plan.Phi.phi_x(T, j).transpose() * c).cwiseAbs().sum();
  return val;
}

double tau_norm(const Plan& plan, int k) {
  const int T = plan.horizon();
  require(k >= 0 && k <= T, "tau_norm: k out of range");
  const int nx = plan.nx(), nu = plan.nu();
  double worst = 0.0;
  for (int r = 0; r < nx; ++r) {
    double s = std::abs(plan.psi_x[k](r));
    for (int j = 0; j < k; ++j) s += plan.Phi.phi_x(k, j).row(r).cwiseAbs().sum();
    worst = std::max(worst, s);
  }
  if (k <= T - 1) {
    for (int r = 0; r < nu; ++r) {
      double s = std::abs(plan.psi_u[k](r));
      for (int j = 0; j < k; ++j) s += plan.Phi.phi_u(k, j).row(r).cwiseAbs().sum();
      worst = std::max(worst, s);
    }
  }
  return worst;
}

PlanCheckReport check_plan(const Plan& plan, const Model& m, const ErrorBoundParams& err,
                           const ConstraintSet& C, const TerminalIngredients* ti,
                           const PlanCheckOptions& opts) {
  PlanCheckReport rep;
  const int T = plan.horizon();

  std::vector<Linearization> jac(T);
  for (int k = 0; k < T; ++k) jac[k] = m.jacobians(plan.z[k], plan.v[k]);

  for (int k = 0; k < T; ++k) {
    Vec resid = plan.z[k + 1] - m.f(plan.z[k], plan.v[k]);
    rep.nominal_dynamics_residual = std::max(rep.nominal_dynamics_residual, inf_norm(resid));
    Vec presid = plan.psi_x[k + 1] - jac[k].A * plan.psi_x[k] - jac[k].B * plan.psi_u[k];
    rep.psi_dynamics_residual = std::max(rep.psi_dynamics_residual, inf_norm(presid));
  }

  for (int j = 0; j < T; ++j) {
    Vec sig = sigma(err, m, plan.z[j], plan.v[j], plan.tau(j));
    Mat diag_resid = plan.Phi.phi_x(j + 1, j) - Mat(sig.asDiagonal());
    rep.sigma_diag_residual = std::max(rep.sigma_diag_residual, inf_norm(diag_resid));
    for (int k = j + 1; k < T; ++k) {
      Mat resid =
          plan.Phi.phi_x(k + 1, j) - jac[k].A * plan.Phi.phi_x(k, j) - jac[k].B * plan.Phi.phi_u(k, j);
      rep.phi_recursion_residual = std::max(rep.phi_recursion_residual, inf_norm(resid));
    }
  }

  rep.z_terminal_norm = inf_norm(plan.z[T]);
  if (opts.check_psi0 && opts.x0.size() == plan.nx())
    rep.psi0_residual = inf_norm(Vec(plan.psi_x[0] - (opts.x0 - plan.z[0])));

  for (int k = 0; k < T; ++k)
    for (int i = 0; i < C.count(); ++i)
      rep.worst_tightened = std::max(rep.worst_tightened, tightened_value(plan, C, i, k));

  if (ti && opts.check_terminal)
    for (int i = 0; i < ti->n_f(); ++i)
      rep.worst_terminal = std::max(rep.worst_terminal, terminal_tightened_value(plan, *ti, i));

  for (int k = 0; k < T; ++k)
    rep.worst_tau_excess = std::max(rep.worst_tau_excess, tau_norm(plan, k) - plan.tau(k));
  if (plan.tau_T)
    rep.worst_tau_excess = std::max(rep.worst_tau_excess, tau_norm(plan, T) - *plan.tau_T);

  rep.ok = rep.nominal_dynamics_residual <= 1e-8 && rep.psi_dynamics_residual <= 1e-8 &&
           rep.phi_recursion_residual <= 1e-8 && rep.sigma_diag_residual <= opts.eq_tol &&
           rep.worst_tightened <= opts.margin_tol && rep.worst_tau_excess <= opts.margin_tol &&
           (!opts.check_terminal || !ti ||
            (rep.worst_terminal <= opts.margin_tol && rep.z_terminal_norm <= 1e-8)) &&
           (!opts.check_psi0 || rep.psi0_residual <= 1e-8);
  return rep;
}

Plan make_consistent_plan(const Model& m, const ErrorBoundParams& err, const Vec& x0,
                          std::vector<Vec> z, std::vector<Vec> v, std::vector<Vec> psi_u,
                          const SystemResponse& phi_u_source, const Vec& tau_init,
                          std::optional<double> tau_T, const ConsistencyOptions& opts) {
  const int T = static_cast<int>(v.size());
  const int nx = m.nx(), nu = m.nu();
  require(static_cast<int>(z.size()) == T + 1, "make_consistent_plan: z size");
  require(static_cast<int>(psi_u.size()) == T, "make_consistent_plan: psi_u size");

  Plan plan;
  plan.z = std::move(z);
  plan.v = std::move(v);
  plan.psi_u = std::move(psi_u);
  plan.Phi = SystemResponse(T, nx, nu);
  for (int j = 0; j < T; ++j) plan.Phi.col_u(j) = phi_u_source.col_u(j);
  plan.tau = tau_init;
  plan.tau_T = tau_T;

  std::vector<Linearization> jac(T);
  for (int k = 0; k < T; ++k) jac[k] = m.jacobians(plan.z[k], plan.v[k]);

  plan.psi_x.assign(T + 1, Vec::Zero(nx));
  plan.psi_x[0] = x0 - plan.z[0];
  for (int k = 0; k < T; ++k)
    plan.psi_x[k + 1] = jac[k].A * plan.psi_x[k] + jac[k].B * plan.psi_u[k];

  // tau <-> sigma fixed point: the row norms grow with sigma(tau), so iterate
  // from the initial guess and keep the running maximum
  std::vector<Vec> sig(T);
  const double tau_cap = 1e6 * (1.0 + inf_norm(tau_init));
  for (int it = 0; it < opts.max_tau_iter; ++it) {
    for (int j = 0; j < T; ++j) sig[j] = sigma(err, m, plan.z[j], plan.v[j], plan.tau(j));
    propagate_phi(plan.Phi, jac, sig);
    double worst_gap = 0.0;
    for (int k = 0; k < T; ++k) {
      double rn = tau_norm(plan, k);
      if (rn > plan.tau(k)) {
        worst_gap = std::max(worst_gap, rn - plan.tau(k));
        plan.tau(k) = rn;
      }
    }
    if (std::getenv("RNMPC_DEBUG_MC") != nullptr)
      std::fprintf(stderr, "  mc it=%d taumax=%.5g gap=%.3g\n", it, plan.tau.maxCoeff(), worst_gap);
    if (worst_gap <= opts.tau_tol) break;
    if (plan.tau.maxCoeff() > tau_cap) break;  // divergent curvature feedback; caller checks
  }
  return plan;
}

TubePolicy::TubePolicy(const Plan& plan, const Model& m, const ErrorBoundParams& err)
    : plan_(plan) {
  const int T = plan.horizon();
  sigma_seq_.resize(T);
  for (int j = 0; j < T; ++j)
    sigma_seq_[j] = sigma(err, m, plan.z[j], plan.v[j], plan.tau(j));
}

Vec TubePolicy::input(int k, const Vec& x_k) {
  require(k >= 0 && k <= plan_.horizon() - 1, "TubePolicy: step out of range");
  require(static_cast<int>(w_hat_.size()) == std::max(0, k - 1),
          "TubePolicy: steps must be applied in order");
  if (k > 0) {
    // identify the newest normalized disturbance from the observed deviation
    Vec e = (x_k - plan_.z[k]) - plan_.psi_x[k];
    for (int j = 0; j + 1 < k; ++j) e -= plan_.Phi.phi_x(k, j) * w_hat_[j];
    const Vec& sig = sigma_seq_[k - 1];
    Vec w = Vec::Zero(sig.size());
    for (int i = 0; i < w.size(); ++i) {
      if (sig(i) > 0.0) {
        w(i) = e(i) / sig(i);
      } else if (std::abs(e(i)) > 1e-9) {
        throw std::runtime_error("sigma degenerate; bound violated");
      }
    }
    w_hat_.push_back(w);
  }
  Vec u = plan_.v[k] + plan_.psi_u[k];
  for (int j = 0; j < k; ++j) u += plan_.Phi.phi_u(k, j) * w_hat_[j];
  return u;
}

// ---------------------------------------------------------------------------
// serialization

namespace {

nlohmann::json vec_json(const Vec& v) {
  nlohmann::json a = nlohmann::json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

Vec vec_from(const nlohmann::json& j) {
  Vec v(static_cast<int>(j.size()));
  for (int i = 0; i < v.size(); ++i) v(i) = j[i].get<double>();
  return v;
}

nlohmann::json mat_json(const Mat& m) {
  nlohmann::json a = nlohmann::json::array();
  for (int i = 0; i < m.rows(); ++i)
    for (int c = 0; c < m.cols(); ++c) a.push_back(m(i, c));  // row-major flat
  return a;
}

Mat mat_from(const nlohmann::json& j, int rows, int cols) {
  Mat m(rows, cols);
  int idx = 0;
  for (int i = 0; i < rows; ++i)
    for (int c = 0; c < cols; ++c) m(i, c) = j[idx++].get<double>();
  return m;
}

}  // namespace

std::string plan_to_json(const Plan& plan) {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["T"] = plan.horizon();
  j["nx"] = plan.nx();
  j["nu"] = plan.nu();
  auto arr = [](const std::vector<Vec>& vs) {
    nlohmann::json a = nlohmann::json::array();
    for (const Vec& v : vs) a.push_back(vec_json(v));
    return a;
  };
  j["z"] = arr(plan.z);
  j["v"] = arr(plan.v);
  j["psi_x"] = arr(plan.psi_x);
  j["psi_u"] = arr(plan.psi_u);
  j["tau"] = vec_json(plan.tau);
  if (plan.tau_T) j["tau_T"] = *plan.tau_T;
  nlohmann::json cols_x = nlohmann::json::array(), cols_u = nlohmann::json::array();
  for (int jj = 0; jj < plan.horizon(); ++jj) {
    cols_x.push_back(mat_json(plan.Phi.col_x(jj)));
    cols_u.push_back(mat_json(plan.Phi.col_u(jj)));
  }
  j["phi_x_cols"] = cols_x;
  j["phi_u_cols"] = cols_u;
  return j.dump();
}

Plan plan_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  if (j.value("schema_version", 0) != 1)
    throw std::runtime_error("plan JSON: unsupported schema version");
  const int T = j.at("T").get<int>();
  const int nx = j.at("nx").get<int>();
  const int nu = j.at("nu").get<int>();
  Plan plan = Plan::zero(T, nx, nu);
  auto load = [](const nlohmann::json& a, std::vector<Vec>& out) {
    out.clear();
    for (const auto& e : a) out.push_back(vec_from(e));
  };
  load(j.at("z"), plan.z);
  load(j.at("v"), plan.v);
  load(j.at("psi_x"), plan.psi_x);
  load(j.at("psi_u"), plan.psi_u);
  plan.tau = vec_from(j.at("tau"));
  if (j.contains("tau_T")) plan.tau_T = j.at("tau_T").get<double>();
  for (int jj = 0; jj < T; ++jj) {
    plan.Phi.col_x(jj) = mat_from(j.at("phi_x_cols")[jj], (T - jj) * nx, nx);
    plan.Phi.col_u(jj) = mat_from(j.at("phi_u_cols")[jj], std::max(0, T - 1 - jj) * nu, nx);
  }
  return plan;
}

}  // namespace rnmpc
