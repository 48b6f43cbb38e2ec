#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace rnmpc {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Max absolute row sum (matrix infinity norm).
inline double inf_norm(const Mat& m) {
  if (m.size() == 0) return 0.0;
  return m.cwiseAbs().rowwise().sum().maxCoeff();
}

inline double inf_norm(const Vec& v) {
  if (v.size() == 0) return 0.0;
  return v.cwiseAbs().maxCoeff();
}

/// Per-row 1-norms of a matrix, as a column vector.
inline Vec row_one_norms(const Mat& m) {
  return m.cwiseAbs().rowwise().sum();
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace rnmpc
