#pragma once

#include <vector>

#include "rnmpc/types.hpp"

namespace rnmpc {

struct LqrSolution {
  Mat K;  ///< stabilizing gain, u = K x
  Mat P;  ///< value matrix
};

/// Infinite-horizon discrete LQR via Riccati iteration.
LqrSolution dare(const Mat& A, const Mat& B, const Mat& Q, const Mat& R, int max_iter = 10000,
                 double tol = 1e-12);

/// Solve A' P A - P + S = 0 for stable A (doubling iteration).
Mat dlyap(const Mat& A, const Mat& S, int max_iter = 200, double tol = 1e-13);

/// One stage of a time-varying LQR with cross terms and affine cost.
struct LqrStage {
  Mat A, B;
  Mat Qxx, Quu, Qxu;
  Vec qx, qu;
};

struct LqrTerminalCost {
  Mat Qxx;
  Vec qx;
};

struct LqrPolicy {
  std::vector<Mat> K;
  std::vector<Vec> k;
};

/// Backward Riccati pass for min sum_k 0.5 [x;u]'H_k[x;u] + q_k'[x;u] plus the
/// terminal cost, subject to x_{k+1} = A_k x_k + B_k u_k.
LqrPolicy riccati_backward(const std::vector<LqrStage>& stages, const LqrTerminalCost& terminal);

/// Roll the policy forward from x0; returns states (T+1) and inputs (T).
std::pair<std::vector<Vec>, std::vector<Vec>> riccati_forward(const std::vector<LqrStage>& stages,
                                                              const LqrPolicy& policy,
                                                              const Vec& x0);

}  // namespace rnmpc
