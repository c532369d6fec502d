#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <vector>

#include "errors.hpp"

namespace cgbound {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Symmetric part of a square matrix.
inline Mat symmetrize(const Mat& a) { return 0.5 * (a + a.transpose()); }

/// Symmetric PSD square root by eigendecomposition; eigenvalues below floor are clamped.
inline Mat sym_sqrt(const Mat& a, double floor = 0.0) {
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(a));
  Vec ev = es.eigenvalues().cwiseMax(floor).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

inline Mat sym_inv_sqrt(const Mat& a) {
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(a));
  Vec ev = es.eigenvalues();
  require(ev.minCoeff() > 0.0, ErrorKind::numerical, "inverse square root of a non-positive-definite matrix");
  return es.eigenvectors() * ev.cwiseSqrt().cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
}

/// Re-symmetrize and clamp eigenvalues from below.
inline Mat psd_floor(const Mat& a, double floor) {
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(a));
  Vec ev = es.eigenvalues().cwiseMax(floor);
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

inline double min_eig(const Mat& a) {
  return Eigen::SelfAdjointEigenSolver<Mat>(symmetrize(a), Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
}

inline double max_eig(const Mat& a) {
  return Eigen::SelfAdjointEigenSolver<Mat>(symmetrize(a), Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
}

/// Reciprocal condition number of a symmetric PSD matrix (0 when singular).
inline double rcond_sym(const Mat& a) {
  Vec ev = Eigen::SelfAdjointEigenSolver<Mat>(symmetrize(a), Eigen::EigenvaluesOnly).eigenvalues();
  double hi = ev.cwiseAbs().maxCoeff();
  if (hi == 0.0) return 0.0;
  return std::max(ev.minCoeff(), 0.0) / hi;
}

/// Operator 2-norm.
inline double op_norm(const Mat& a) {
  if (a.size() == 0) return 0.0;
  Eigen::JacobiSVD<Mat> svd(a);
  return svd.singularValues()(0);
}

/// Orthonormal basis of ker(t) as columns (d x (d-k)).
inline Mat kernel_basis(const Mat& t) {
  Eigen::JacobiSVD<Mat> svd(t, Eigen::ComputeFullV);
  const long k = t.rows(), d = t.cols();
  return svd.matrixV().rightCols(d - k);
}

inline bool all_finite(const Vec& v) { return v.allFinite(); }

inline std::vector<double> to_std(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

}  // namespace cgbound
