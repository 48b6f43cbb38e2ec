#include "rnmpc/model.hpp"

#include <cmath>
#include <random>

#include "rnmpc/polytope.hpp"

namespace rnmpc {

Vec ErrorBoundParams::e_rows(const Model& m, const Vec& z, const Vec& v) const {
  return row_one_norms(m.E(z, v));
}

Vec step(const Model& m, const Vec& x, const Vec& u, const Vec& w) {
  require(x.size() == m.nx(), "step: state dimension mismatch");
  require(u.size() == m.nu(), "step: input dimension mismatch");
  require(w.size() == m.nx(), "step: disturbance dimension mismatch");
  Vec next = m.f(x, u) + m.E(x, u) * w;
  if (!next.allFinite()) throw std::runtime_error("step: model evaluation produced non-finite values");
  return next;
}

Vec sigma(const ErrorBoundParams& p, const Model& m, const Vec& z, const Vec& v, double tau) {
  require(tau >= 0.0, "sigma: tau must be nonnegative");
  require(p.mu.size() == m.nx(), "sigma: mu dimension mismatch");
  return tau * tau * p.mu + p.e_rows(m, z, v);
}

namespace {

// Central finite-difference Hessians of every component of f at y = (x, u).
// H[i] is (nx+nu) x (nx+nu).
std::vector<Mat> fd_hessians(const Model& m, const Vec& y, double h) {
  const int nx = m.nx(), nu = m.nu();
  const int n = nx + nu;
  auto eval = [&](const Vec& p) { return m.f(p.head(nx), p.tail(nu)); };
  std::vector<Mat> H(nx, Mat::Zero(n, n));
  const Vec f0 = eval(y);
  for (int a = 0; a < n; ++a) {
    Vec ya = y, yb = y;
    ya(a) += h;
    yb(a) -= h;
    Vec daa = (eval(ya) - 2.0 * f0 + eval(yb)) / (h * h);
    for (int i = 0; i < nx; ++i) H[i](a, a) = daa(i);
    for (int b = a + 1; b < n; ++b) {
      Vec ypp = y, ypm = y, ymp = y, ymm = y;
      ypp(a) += h; ypp(b) += h;
      ypm(a) += h; ypm(b) -= h;
      ymp(a) -= h; ymp(b) += h;
      ymm(a) -= h; ymm(b) -= h;
      Vec dab = (eval(ypp) - eval(ypm) - eval(ymp) + eval(ymm)) / (4.0 * h * h);
      for (int i = 0; i < nx; ++i) {
        H[i](a, b) = dab(i);
        H[i](b, a) = dab(i);
      }
    }
  }
  return H;
}

}  // namespace

ErrorBoundParams estimate_curvature(const Model& m, const ConstraintSet& C, int n_samples,
                                    unsigned long long seed, const CurvatureOptions& opts) {
  require(n_samples >= 1, "estimate_curvature: n_samples must be >= 1");
  require(C.nx() == m.nx() && C.nu() == m.nu(), "estimate_curvature: constraint set dims");
  const int n = m.nx() + m.nu();

  auto [lo, hi] = C.bounding_box();  // throws if C unbounded

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  // sign vectors: exact enumeration when feasible, otherwise a random subset
  std::vector<Vec> signs;
  if (n <= opts.exact_sign_limit) {
    const long count = 1L << (n - 1);  // h and -h give the same quadratic form
    signs.reserve(count);
    for (long mask = 0; mask < count; ++mask) {
      Vec h(n);
      h(0) = 1.0;
      for (int b = 1; b < n; ++b) h(b) = (mask >> (b - 1)) & 1 ? 1.0 : -1.0;
      signs.push_back(h);
    }
  } else {
    signs.reserve(opts.random_signs);
    for (int s = 0; s < opts.random_signs; ++s) {
      Vec h(n);
      for (int b = 0; b < n; ++b) h(b) = unif(rng) < 0.5 ? -1.0 : 1.0;
      signs.push_back(h);
    }
  }

  Vec mu = Vec::Zero(m.nx());
  int accepted = 0;
  long attempts = 0;
  const long max_attempts = 1000L * n_samples + 1000;
  while (accepted < n_samples && attempts < max_attempts) {
    ++attempts;
    Vec y(n);
    for (int i = 0; i < n; ++i) y(i) = lo(i) + unif(rng) * (hi(i) - lo(i));
    if (!C.contains(y.head(m.nx()), y.tail(m.nu()), 1e-12)) continue;
    ++accepted;
    auto H = fd_hessians(m, y, opts.fd_step);
    for (int i = 0; i < m.nx(); ++i) {
      double best = 0.0;
      for (const Vec& h : signs) best = std::max(best, std::abs(h.dot(H[i] * h)));
      mu(i) = std::max(mu(i), 0.5 * best);
    }
  }
  require(accepted == n_samples, "estimate_curvature: rejection sampling failed to fill quota");

  ErrorBoundParams params;
  params.mu = mu;
  params.bound_validated = m.constant_E();
  params.samples_used = n_samples;
  params.seed_used = seed;
  return params;
}

}  // namespace rnmpc
