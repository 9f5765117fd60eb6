#pragma once

#include "follmer/core.hpp"

#include <algorithm>
#include <cmath>

namespace follmer::linalg {

template <typename M>
M symmetrize(const M& a) {
  return (0.5 * (a + a.transpose())).eval();
}

template <typename M>
bool is_symmetric(const M& a, double tol = 1e-12) {
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  return (a - a.transpose()).cwiseAbs().maxCoeff() <= tol * scale;
}

template <typename M>
double min_eigenvalue(const M& a) {
  Eigen::SelfAdjointEigenSolver<M> es(symmetrize(a), Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

template <typename M>
double max_eigenvalue(const M& a) {
  Eigen::SelfAdjointEigenSolver<M> es(symmetrize(a), Eigen::EigenvaluesOnly);
  return es.eigenvalues()(es.eigenvalues().size() - 1);
}

/// Applies f to the spectrum of a symmetric matrix.
template <typename M, typename F>
M spectral_apply(const M& a, F&& f) {
  Eigen::SelfAdjointEigenSolver<M> es(symmetrize(a));
  auto vals = es.eigenvalues().eval();
  for (Eigen::Index i = 0; i < vals.size(); ++i) vals(i) = f(vals(i));
  return (es.eigenvectors() * vals.asDiagonal() * es.eigenvectors().transpose()).eval();
}

/// Square root of a PSD matrix; eigenvalues below tol * max(1, lambda_max) are clamped to zero.
template <typename M>
M sqrtm_psd(const M& a, double tol = 1e-12) {
  Eigen::SelfAdjointEigenSolver<M> es(symmetrize(a));
  auto vals = es.eigenvalues().eval();
  const double floor = tol * std::max(1.0, std::abs(vals(vals.size() - 1)));
  for (Eigen::Index i = 0; i < vals.size(); ++i) {
    if (vals(i) < -floor) fail(Errc::NotPositiveDefinite, "negative eigenvalue in square root");
    vals(i) = vals(i) <= floor ? 0.0 : std::sqrt(vals(i));
  }
  return (es.eigenvectors() * vals.asDiagonal() * es.eigenvectors().transpose()).eval();
}

template <typename M>
M inv_sqrtm_spd(const M& a) {
  Eigen::SelfAdjointEigenSolver<M> es(symmetrize(a));
  auto vals = es.eigenvalues().eval();
  for (Eigen::Index i = 0; i < vals.size(); ++i) {
    if (!(vals(i) > 0.0)) fail(Errc::NotPositiveDefinite, "matrix is not positive definite");
    vals(i) = 1.0 / std::sqrt(vals(i));
  }
  return (es.eigenvectors() * vals.asDiagonal() * es.eigenvectors().transpose()).eval();
}

template <typename M>
double log_det_spd(const M& a) {
  Eigen::LLT<M> llt(a);
  if (llt.info() != Eigen::Success) fail(Errc::NotPositiveDefinite, "Cholesky failed");
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

template <typename M>
bool is_spd(const M& a) {
  if (!is_symmetric(a, 1e-10)) return false;
  Eigen::LLT<M> llt(symmetrize(a));
  return llt.info() == Eigen::Success && min_eigenvalue(a) > 0.0;
}

/// Spectral norm of a general matrix.
template <typename M>
double operator_norm(const M& a) {
  Eigen::JacobiSVD<M> svd(a);
  return svd.singularValues()(0);
}

}  // namespace follmer::linalg
