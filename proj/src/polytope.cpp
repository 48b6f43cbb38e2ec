#include "rnmpc/polytope.hpp"

#include <cmath>
#include <cstdio>
#include <vector>

#include "json.hpp"
#include "rnmpc/lp.hpp"
#include "rnmpc/model.hpp"
#include "rnmpc/riccati.hpp"

namespace rnmpc {

// ---------------------------------------------------------------------------
// Polytope

double Polytope::support(const Vec& dir) const {
  auto res = solve_lp(rows, -offsets, dir);
  if (res.status == LpStatus::unbounded)
    throw std::runtime_error("polytope support: set unbounded in the requested direction");
  if (res.status == LpStatus::infeasible)
    throw std::runtime_error("polytope support: set is empty");
  if (res.status != LpStatus::optimal)
    throw std::runtime_error("polytope support: LP iteration limit");
  return res.objective;
}

bool Polytope::contains(const Vec& y, double tol) const {
  return ((rows * y + offsets).array() <= tol).all();
}

bool Polytope::is_bounded() const {
  const int n = dim();
  for (int i = 0; i < n; ++i) {
    for (double sgn : {1.0, -1.0}) {
      Vec dir = Vec::Zero(n);
      dir(i) = sgn;
      auto res = solve_lp(rows, -offsets, dir);
      if (res.status != LpStatus::optimal) return false;
    }
  }
  return true;
}

bool Polytope::is_empty() const {
  // min t s.t. rows*y + offsets <= t; empty iff the optimum is positive
  const int n = dim();
  Mat A(count(), n + 1);
  A.leftCols(n) = rows;
  A.col(n).setConstant(-1.0);
  Vec c = Vec::Zero(n + 1);
  c(n) = -1.0;  // maximize -t
  auto res = solve_lp(A, -offsets, c);
  if (res.status == LpStatus::unbounded) return false;  // t can go to -inf: nonempty interior
  if (res.status != LpStatus::optimal) return true;
  return -res.objective > 1e-9;
}

void Polytope::prune_redundant(double tol) {
  const int m = count();
  if (m <= 1) return;
  std::vector<int> keep;
  keep.reserve(m);
  std::vector<char> active(m, 1);
  for (int i = 0; i < m; ++i) {
    // test row i against the others that are still active
    int cnt = 0;
    for (int j = 0; j < m; ++j)
      if (active[j] && j != i) ++cnt;
    if (cnt == 0) continue;
    Mat A(cnt, dim());
    Vec b(cnt);
    int r = 0;
    for (int j = 0; j < m; ++j) {
      if (!active[j] || j == i) continue;
      A.row(r) = rows.row(j);
      b(r) = -offsets(j);
      ++r;
    }
    auto res = solve_lp(A, b, rows.row(i).transpose());
    if (res.status == LpStatus::optimal && res.objective <= -offsets(i) + tol) active[i] = 0;
  }
  int kept = 0;
  for (int i = 0; i < m; ++i)
    if (active[i]) ++kept;
  Mat new_rows(kept, dim());
  Vec new_off(kept);
  int r = 0;
  for (int i = 0; i < m; ++i) {
    if (!active[i]) continue;
    new_rows.row(r) = rows.row(i);
    new_off(r) = offsets(i);
    ++r;
  }
  rows = new_rows;
  offsets = new_off;
}

// ---------------------------------------------------------------------------
// ConstraintSet

ConstraintSet::ConstraintSet(Mat rows, Vec offsets, int nx, int nu)
    : rows_(std::move(rows)), offsets_(std::move(offsets)), nx_(nx), nu_(nu) {
  require(rows_.cols() == nx_ + nu_, "ConstraintSet: row dimension must be nx + nu");
  require(rows_.rows() == offsets_.size(), "ConstraintSet: rows/offsets mismatch");
  require((offsets_.array() < 0.0).all(), "ConstraintSet: origin must be strictly feasible (b_i < 0)");
  Polytope p{rows_, offsets_};
  require(p.is_bounded(), "ConstraintSet: set must be bounded");
}

ConstraintSet ConstraintSet::box(const Vec& x_bound, const Vec& u_bound) {
  const int nx = static_cast<int>(x_bound.size());
  const int nu = static_cast<int>(u_bound.size());
  const int n = nx + nu;
  Mat rows(2 * n, n);
  Vec offsets(2 * n);
  Vec bounds(n);
  bounds << x_bound, u_bound;
  rows.setZero();
  for (int i = 0; i < n; ++i) {
    rows(2 * i, i) = 1.0;
    offsets(2 * i) = -bounds(i);
    rows(2 * i + 1, i) = -1.0;
    offsets(2 * i + 1) = -bounds(i);
  }
  return ConstraintSet(rows, offsets, nx, nu);
}

double ConstraintSet::support(const Vec& direction) const {
  require(direction.size() == dim(), "support: direction dimension mismatch");
  return as_polytope().support(direction);
}

bool ConstraintSet::contains(const Vec& x, const Vec& u, double tol) const {
  Vec y(dim());
  y << x, u;
  return ((rows_ * y + offsets_).array() <= tol).all();
}

std::pair<Vec, Vec> ConstraintSet::bounding_box() const {
  const int n = dim();
  Vec lo(n), hi(n);
  Polytope p = as_polytope();
  for (int i = 0; i < n; ++i) {
    Vec dir = Vec::Zero(n);
    dir(i) = 1.0;
    hi(i) = p.support(dir);
    dir(i) = -1.0;
    lo(i) = -p.support(dir);
  }
  return {lo, hi};
}

double support(const ConstraintSet& set, const Vec& direction) { return set.support(direction); }

// ---------------------------------------------------------------------------
// RPI synthesis

namespace {

void normalize_rows(Mat& rows, Vec& offsets) {
  for (int i = 0; i < rows.rows(); ++i) {
    double n = rows.row(i).norm();
    if (n > 1e-300) {
      rows.row(i) /= n;
      offsets(i) /= n;
    }
  }
}

// drop duplicate rows (same direction, keep the tighter offset)
void dedupe_rows(Mat& rows, Vec& offsets, double tol = 1e-10) {
  const int m = static_cast<int>(rows.rows());
  std::vector<char> keep(m, 1);
  for (int i = 0; i < m; ++i) {
    if (!keep[i]) continue;
    for (int j = i + 1; j < m; ++j) {
      if (!keep[j]) continue;
      if ((rows.row(i) - rows.row(j)).cwiseAbs().maxCoeff() < tol) {
        if (offsets(j) > offsets(i)) {  // larger offset = tighter (c'x <= -b)
          offsets(i) = offsets(j);
        }
        keep[j] = 0;
      }
    }
  }
  int kept = 0;
  for (char k : keep) kept += k;
  Mat nr(kept, rows.cols());
  Vec no(kept);
  int r = 0;
  for (int i = 0; i < m; ++i)
    if (keep[i]) {
      nr.row(r) = rows.row(i);
      no(r) = offsets(i);
      ++r;
    }
  rows = nr;
  offsets = no;
}

double tau_of_set(const Polytope& xf, const Mat& K_f) {
  const int nx = xf.dim();
  const int nu = static_cast<int>(K_f.rows());
  double tau = 0.0;
  for (int i = 0; i < nx; ++i) {
    Vec dir = Vec::Zero(nx);
    dir(i) = 1.0;
    tau = std::max(tau, xf.support(dir));
    dir(i) = -1.0;
    tau = std::max(tau, xf.support(dir));
  }
  for (int j = 0; j < nu; ++j) {
    Vec dir = K_f.row(j).transpose();
    tau = std::max(tau, xf.support(dir));
    tau = std::max(tau, xf.support(Vec(-dir)));
  }
  return tau;
}

}  // namespace

Polytope max_rpi_set(const Mat& A_cl, const Vec& sigma_diag, const Polytope& admissible,
                     const TerminalSynthOptions& opts) {
  Polytope omega = admissible;
  normalize_rows(omega.rows, omega.offsets);
  dedupe_rows(omega.rows, omega.offsets);
  omega.prune_redundant(opts.set_tol);
  if ((omega.offsets.array() >= 0.0).any() || omega.is_empty())
    throw std::runtime_error("no RPI terminal set; disturbance too large");

  for (int it = 0; it < opts.max_rpi_iter; ++it) {
    // pre-set rows: c'(A_cl x + Sigma w) + b <= 0 for all |w|<=1
    const int m = omega.count();
    Mat pre_rows(m, omega.dim());
    Vec pre_off(m);
    for (int i = 0; i < m; ++i) {
      Vec c = omega.rows.row(i).transpose();
      pre_rows.row(i) = (A_cl.transpose() * c).transpose();
      pre_off(i) = omega.offsets(i) + sigma_diag.cwiseAbs().dot(c.cwiseAbs());
    }
    Mat cand_rows(admissible.count() + m, omega.dim());
    Vec cand_off(admissible.count() + m);
    cand_rows << admissible.rows, pre_rows;
    cand_off << admissible.offsets, pre_off;
    normalize_rows(cand_rows, cand_off);
    dedupe_rows(cand_rows, cand_off);
    Polytope cand{cand_rows, cand_off};
    if ((cand_off.array() >= -1e-12).any() || cand.is_empty())
      throw std::runtime_error("no RPI terminal set; disturbance too large");
    cand.prune_redundant(opts.set_tol);

    // converged when omega satisfies every candidate row (sets equal since
    // cand is contained in omega by construction)
    bool same = true;
    for (int i = 0; i < cand.count() && same; ++i) {
      double sup = omega.support(cand.rows.row(i).transpose());
      if (sup > -cand.offsets(i) + opts.set_tol) same = false;
    }
    if (same) return cand;
    omega = cand;
  }
  throw std::runtime_error("max_rpi_set: recursion failed to converge");
}

namespace {

// canonical unit direction with positive leading entry; false when degenerate
bool canonicalize(Vec& c) {
  double norm = c.norm();
  if (norm < 1e-12) return false;
  c /= norm;
  int lead = 0;
  while (lead < c.size() && std::abs(c(lead)) < 1e-12) ++lead;
  if (lead < c.size() && c(lead) < 0) c = -c;
  return true;
}

}  // namespace

Polytope min_rpi_outer(const Mat& A_cl, const Vec& sigma_diag, const Mat& seed_dirs,
                       const TerminalSynthOptions& opts) {
  const int n = static_cast<int>(A_cl.rows());
  require((sigma_diag.array() > 0.0).all(), "min_rpi_outer: sigma must be positive componentwise");

  // disturbance-accumulation stages until the tail fits into alpha * W
  std::vector<Mat> stages;
  Mat Ak = Mat::Identity(n, n);
  double alpha = 1.0;
  for (int k = 0; k < opts.max_order; ++k) {
    stages.push_back(Ak * sigma_diag.asDiagonal());
    Ak = A_cl * Ak;
    Mat tail = Ak * sigma_diag.asDiagonal();
    alpha = 0.0;
    for (int i = 0; i < n; ++i)
      alpha = std::max(alpha, tail.row(i).cwiseAbs().sum() / sigma_diag(i));
    if (alpha <= opts.alpha_target) break;
  }
  require(alpha < 1.0, "min_rpi_outer: closed loop contracts too slowly for an RPI approximation");
  const double inflate = 1.0 / (1.0 - alpha);

  // exact zonotope support of the inflated accumulation set
  auto support_z = [&](const Vec& c) {
    double h = 0.0;
    for (const Mat& g : stages) h += (g.transpose() * c).cwiseAbs().sum();
    return inflate * h;
  };

  // direction set: axes plus seeds, closed under A_cl^T up to a finite depth;
  // closure makes the row-wise invariance argument inherit from the zonotope
  std::vector<Vec> dirs;
  auto push_dir = [&](Vec c) {
    if (!canonicalize(c)) return false;
    for (const Vec& e : dirs)
      if ((e - c).cwiseAbs().maxCoeff() < 1e-9) return false;
    dirs.push_back(std::move(c));
    return true;
  };
  for (int i = 0; i < n; ++i) {
    Vec e = Vec::Zero(n);
    e(i) = 1.0;
    push_dir(e);
  }
  for (int i = 0; i < seed_dirs.rows(); ++i) push_dir(seed_dirs.row(i).transpose());

  // grow the A_cl^T orbit; a direction whose image is itself in the set needs
  // no LP check (it inherits invariance from the zonotope)
  auto has_dir = [&](Vec c) {
    if (!canonicalize(c)) return true;  // degenerate image: trivially covered
    for (const Vec& e : dirs)
      if ((e - c).cwiseAbs().maxCoeff() < 1e-9) return true;
    return false;
  };

  int depth = opts.orbit_depth;
  double beta = 0.0;  // inflation supplies the invariance margin a finite
                      // direction set needs; zero when the orbit closes
  while (true) {
    std::size_t shell_begin = 0;
    for (int d = 0; d < depth; ++d) {
      const std::size_t shell_end = dirs.size();
      for (std::size_t i = shell_begin; i < shell_end; ++i) push_dir(A_cl.transpose() * dirs[i]);
      if (dirs.size() == shell_end) break;  // orbit closed
      shell_begin = shell_end;
    }

    const int m = static_cast<int>(dirs.size());
    Mat rows(2 * m, n);
    Vec offsets(2 * m);
    std::vector<double> hz(m);
    for (int i = 0; i < m; ++i) {
      hz[i] = support_z(dirs[i]);
      double h = (1.0 + beta) * hz[i];
      rows.row(2 * i) = dirs[i].transpose();
      offsets(2 * i) = -h;
      rows.row(2 * i + 1) = -dirs[i].transpose();
      offsets(2 * i + 1) = -h;
    }
    Polytope xf{rows, offsets};

    bool invariant = true;
    for (int i = 0; i < m && invariant; ++i) {
      Vec img = A_cl.transpose() * dirs[i];
      if (has_dir(img)) continue;  // covered analytically
      double sup = xf.support(img);
      double lhs = sup + sigma_diag.cwiseAbs().dot(dirs[i].cwiseAbs());
      if (lhs > (1.0 + beta) * hz[i] + opts.set_tol) invariant = false;
    }
    if (invariant) return xf;
    if (beta < 0.02) {
      beta = 0.02;
    } else if (beta < 0.32) {
      beta *= 2.0;
    } else if (depth < opts.max_orbit_depth) {
      beta = 0.02;
      depth += 8;
    } else {
      throw std::runtime_error("min_rpi_outer: direction set failed to certify invariance");
    }
  }
}

TerminalIngredients synth_terminal(const Model& m, const Mat& Q, const Mat& R,
                                   const ErrorBoundParams& err, const ConstraintSet& C,
                                   const TerminalSynthOptions& opts) {
  const int nx = m.nx(), nu = m.nu();
  require(Q.rows() == nx && R.rows() == nu, "synth_terminal: weight dims");
  Vec x0 = Vec::Zero(nx), u0 = Vec::Zero(nu);
  Linearization lin = m.jacobians(x0, u0);

  LqrSolution lqr = dare(lin.A, lin.B, Q, R);
  Mat K_f = lqr.K;
  Mat A_cl = lin.A + lin.B * K_f;
  require(inf_norm(Mat(A_cl * A_cl * A_cl * A_cl)) < 1e6, "synth_terminal: closed loop not stable");
  Mat P = dlyap(A_cl, Q + K_f.transpose() * R * K_f);

  // admissible set in x-space: (x, K_f x) in C
  Mat ad_rows(C.count(), nx);
  Vec ad_off = C.offsets();
  for (int i = 0; i < C.count(); ++i) {
    Vec c = C.row(i);
    ad_rows.row(i) = (c.head(nx) + K_f.transpose() * c.tail(nu)).transpose();
  }
  Polytope admissible{ad_rows, ad_off};
  normalize_rows(admissible.rows, admissible.offsets);

  // alternate Sigma_f -> X_f -> tau_f upward from tau_f = 0; each accepted
  // iterate stores a tau_f that covers the set built from it, which keeps the
  // stored Sigma_f a sound overbound
  require(!admissible.is_empty(), "synth_terminal: admissible set empty");
  Mat seeds(K_f.rows() + admissible.count(), nx);
  seeds.topRows(K_f.rows()) = K_f;
  seeds.bottomRows(admissible.count()) = admissible.rows;

  Polytope xf;
  double tau_f = 0.0;
  Vec sigma_f;
  bool converged = false;
  const double tau_cap = 1e3 * (1.0 + tau_of_set(admissible, K_f));
  for (int it = 0; it < opts.max_fixed_point_iter; ++it) {
    sigma_f = sigma(err, m, x0, u0, tau_f);
    xf = sigma_f.minCoeff() > 0.0 ? min_rpi_outer(A_cl, sigma_f, seeds, opts)
                                  : max_rpi_set(A_cl, sigma_f, admissible, opts);
    double tau_set = tau_of_set(xf, K_f);
    if (!std::isfinite(tau_set) || tau_set > tau_cap)
      throw std::runtime_error("no RPI terminal set; disturbance too large");
    if (tau_set <= tau_f + 1e-12) {
      converged = true;  // stored tau_f covers the final set: sound
      break;
    }
    tau_f = tau_set + opts.tau_tol;  // land just above the fixed point
  }
  if (!converged) throw std::runtime_error("synth_terminal: tau_f fixed point did not converge");

  // admissibility of the final set
  for (int i = 0; i < admissible.count(); ++i) {
    double sup = xf.support(admissible.rows.row(i).transpose());
    if (sup > -admissible.offsets(i) + 1e-9)
      throw std::runtime_error("no RPI terminal set; disturbance too large");
  }

  TerminalIngredients ti;
  ti.Xf_rows = xf.rows;
  ti.Xf_offsets = xf.offsets;
  ti.K_f = K_f;
  ti.A_cl = A_cl;
  ti.sigma_f = sigma_f;
  ti.tau_f = tau_f;
  ti.P = P;

  auto report = verify_rpi(ti, m, err, C, Q, R);
  if (!report.ok()) throw std::runtime_error("synth_terminal: verification failed after synthesis");
  return ti;
}

RpiReport verify_rpi(const TerminalIngredients& ti, const Model& m, const ErrorBoundParams& err,
                     const ConstraintSet& C, const Mat& Q, const Mat& R) {
  RpiReport rep;
  Polytope xf = ti.xf();
  const int nf = ti.n_f();

  rep.rpi_margins = Vec(nf);
  for (int i = 0; i < nf; ++i) {
    Vec c = ti.Xf_rows.row(i).transpose();
    double sup = xf.support(Vec(ti.A_cl.transpose() * c));
    double dist = ti.sigma_f.cwiseAbs().dot(c.cwiseAbs());
    rep.rpi_margins(i) = -ti.Xf_offsets(i) - (sup + dist);
  }
  rep.rpi_ok = (rep.rpi_margins.array() >= -1e-9).all();

  rep.admissible_margins = Vec(C.count());
  for (int i = 0; i < C.count(); ++i) {
    Vec c = C.row(i);
    Vec dir = c.head(m.nx()) + ti.K_f.transpose() * c.tail(m.nu());
    rep.admissible_margins(i) = -C.offset(i) - xf.support(dir);
  }
  rep.admissible_ok = (rep.admissible_margins.array() >= -1e-9).all();

  Mat resid = ti.A_cl.transpose() * ti.P * ti.A_cl - ti.P + Q + ti.K_f.transpose() * R * ti.K_f;
  resid = 0.5 * (resid + resid.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Mat> eig(resid);
  rep.lyapunov_eig = eig.eigenvalues().maxCoeff();
  rep.lyapunov_ok = rep.lyapunov_eig <= 1e-9;

  double tau_set = tau_of_set(xf, ti.K_f);
  rep.tau_margin = ti.tau_f - tau_set;
  rep.tau_ok = rep.tau_margin >= -1e-9;

  // sigma_f consistency with the error parameters
  Vec sig = sigma(err, m, Vec::Zero(m.nx()), Vec::Zero(m.nu()), ti.tau_f);
  if ((sig - ti.sigma_f).cwiseAbs().maxCoeff() > 1e-9) rep.tau_ok = false;
  return rep;
}

// ---------------------------------------------------------------------------
// serialization

namespace {

nlohmann::json mat_to_json(const Mat& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (int i = 0; i < m.rows(); ++i) {
    nlohmann::json r = nlohmann::json::array();
    for (int j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(r);
  }
  return rows;
}

Mat mat_from_json(const nlohmann::json& j) {
  const int rows = static_cast<int>(j.size());
  if (rows == 0) return Mat(0, 0);
  const int cols = static_cast<int>(j[0].size());
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int c = 0; c < cols; ++c) m(i, c) = j[i][c].get<double>();
  return m;
}

nlohmann::json vec_to_json(const Vec& v) {
  nlohmann::json a = nlohmann::json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

Vec vec_from_json(const nlohmann::json& j) {
  Vec v(static_cast<int>(j.size()));
  for (int i = 0; i < v.size(); ++i) v(i) = j[i].get<double>();
  return v;
}

}  // namespace

std::string terminal_to_json(const TerminalIngredients& ti, const std::string& cache_key) {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["cache_key"] = cache_key;
  j["Xf_rows"] = mat_to_json(ti.Xf_rows);
  j["Xf_offsets"] = vec_to_json(ti.Xf_offsets);
  j["K_f"] = mat_to_json(ti.K_f);
  j["A_cl"] = mat_to_json(ti.A_cl);
  j["sigma_f"] = vec_to_json(ti.sigma_f);
  j["tau_f"] = ti.tau_f;
  j["P"] = mat_to_json(ti.P);
  return j.dump(2);
}

TerminalIngredients terminal_from_json(const std::string& text, const std::string& expected_key) {
  nlohmann::json j = nlohmann::json::parse(text);
  if (j.value("schema_version", 0) != 1)
    throw std::runtime_error("terminal cache: unsupported schema version");
  if (!expected_key.empty() && j.value("cache_key", std::string()) != expected_key)
    throw std::runtime_error(
        "terminal cache: stale entry (model or parameters changed); re-run synth-terminal");
  TerminalIngredients ti;
  ti.Xf_rows = mat_from_json(j.at("Xf_rows"));
  ti.Xf_offsets = vec_from_json(j.at("Xf_offsets"));
  ti.K_f = mat_from_json(j.at("K_f"));
  ti.A_cl = mat_from_json(j.at("A_cl"));
  ti.sigma_f = vec_from_json(j.at("sigma_f"));
  ti.tau_f = j.at("tau_f").get<double>();
  ti.P = mat_from_json(j.at("P"));
  return ti;
}

std::string terminal_cache_key(const Model& m, const ErrorBoundParams& err,
                               const ConstraintSet& C, const Mat& Q, const Mat& R) {
  std::string blob = m.name();
  char buf[64];
  auto add = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g;", v);
    blob += buf;
  };
  add(m.nx());
  add(m.nu());
  Linearization lin = m.jacobians(Vec::Zero(m.nx()), Vec::Zero(m.nu()));
  for (int i = 0; i < lin.A.size(); ++i) add(lin.A.data()[i]);
  for (int i = 0; i < lin.B.size(); ++i) add(lin.B.data()[i]);
  Mat e0 = m.E(Vec::Zero(m.nx()), Vec::Zero(m.nu()));
  for (int i = 0; i < e0.size(); ++i) add(e0.data()[i]);
  for (int i = 0; i < err.mu.size(); ++i) add(err.mu(i));
  for (int i = 0; i < C.rows().size(); ++i) add(C.rows().data()[i]);
  for (int i = 0; i < C.offsets().size(); ++i) add(C.offsets()(i));
  for (int i = 0; i < Q.size(); ++i) add(Q.data()[i]);
  for (int i = 0; i < R.size(); ++i) add(R.data()[i]);

  unsigned long long h = 1469598103934665603ULL;  // FNV-1a
  for (unsigned char c : blob) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::snprintf(buf, sizeof(buf), "%016llx", h);
  return buf;
}

}  // namespace rnmpc
