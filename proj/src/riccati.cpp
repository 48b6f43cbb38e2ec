#include "rnmpc/riccati.hpp"

#include <cmath>

namespace rnmpc {

LqrSolution dare(const Mat& A, const Mat& B, const Mat& Q, const Mat& R, int max_iter,
                 double tol) {
  Mat P = Q;
  for (int it = 0; it < max_iter; ++it) {
    Mat BtP = B.transpose() * P;
    Mat G = (R + BtP * B).ldlt().solve(BtP * A);
    Mat Pn = Q + A.transpose() * P * A - A.transpose() * P * B * G;
    Pn = 0.5 * (Pn + Pn.transpose()).eval();
    double diff = (Pn - P).cwiseAbs().maxCoeff();
    P = Pn;
    if (diff < tol * (1.0 + P.cwiseAbs().maxCoeff())) break;
  }
  Mat BtP = B.transpose() * P;
  Mat K = -(R + BtP * B).ldlt().solve(BtP * A);
  return {K, P};
}

Mat dlyap(const Mat& A, const Mat& S, int max_iter, double tol) {
  Mat P = 0.5 * (S + S.transpose());
  Mat M = A;
  for (int it = 0; it < max_iter; ++it) {
    Mat Pn = P + M.transpose() * P * M;
    Mat Mn = M * M;
    double diff = (Pn - P).cwiseAbs().maxCoeff();
    P = 0.5 * (Pn + Pn.transpose()).eval();
    M = Mn;
    if (diff < tol * (1.0 + P.cwiseAbs().maxCoeff())) break;
  }
  return P;
}

LqrPolicy riccati_backward(const std::vector<LqrStage>& stages, const LqrTerminalCost& terminal) {
  const int T = static_cast<int>(stages.size());
  LqrPolicy policy;
  policy.K.resize(T);
  policy.k.resize(T);
  Mat P = terminal.Qxx;
  Vec p = terminal.qx;
  for (int k = T - 1; k >= 0; --k) {
    const auto& s = stages[k];
    Mat AtP = s.A.transpose() * P;
    Mat Hxx = s.Qxx + AtP * s.A;
    Mat Hxu = s.Qxu + AtP * s.B;
    Mat Huu = s.Quu + s.B.transpose() * P * s.B;
    Vec gx = s.qx + s.A.transpose() * p;
    Vec gu = s.qu + s.B.transpose() * p;
    Eigen::LDLT<Mat> huu(0.5 * (Huu + Huu.transpose()));
    policy.K[k] = -huu.solve(Hxu.transpose());
    policy.k[k] = -huu.solve(gu);
    P = Hxx + Hxu * policy.K[k];
    P = 0.5 * (P + P.transpose()).eval();
    p = gx + Hxu * policy.k[k];
  }
  return policy;
}

std::pair<std::vector<Vec>, std::vector<Vec>> riccati_forward(const std::vector<LqrStage>& stages,
                                                              const LqrPolicy& policy,
                                                              const Vec& x0) {
  const int T = static_cast<int>(stages.size());
  std::vector<Vec> xs(T + 1), us(T);
  xs[0] = x0;
  for (int k = 0; k < T; ++k) {
    us[k] = policy.K[k] * xs[k] + policy.k[k];
    xs[k + 1] = stages[k].A * xs[k] + stages[k].B * us[k];
  }
  return {xs, us};
}

}  // namespace rnmpc
