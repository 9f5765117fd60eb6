#pragma once

#include "follmer/core.hpp"

#include <array>
#include <cmath>
#include <functional>
#include <vector>

namespace follmer::quad {

/// Physicists' Gauss-Hermite rule: sum_i w_i f(x_i) ~ int f(x) exp(-x^2) dx.
struct GaussHermiteRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// Cached rule for n points (n <= 512), computed by Golub-Welsch.
const GaussHermiteRule& gauss_hermite(int n);

/// E[g(Y)] for Y ~ N(mean, cov) by tensor Gauss-Hermite with n points per axis.
double gaussian_expectation(const Vec& mean, const Mat& cov, int n,
                            const std::function<double(const Vec&)>& g);

/// Result of integrating an unnormalized log-density over a tensor box.
struct MomentResult {
  double log_mass = 0.0;  // ln of the integral of exp(logf)
  Vec mean;
  Mat cov;
  int nodes_per_axis = 0;
};

/// Box in affine coordinates y = center + frame * z, z_i in [lo_i, hi_i].
struct Box {
  Vec center;
  Mat frame;
  Vec lo;
  Vec hi;
};

/// Mass, mean and covariance of exp(logf) over the box by nested trapezoid
/// refinement (n0, 2n0-1, ...). Stops when the normalized moments change by
/// less than tol; throws QuadratureNoConvergence after max_doublings.
MomentResult trapezoid_moments(const std::function<double(const Vec&)>& logf, const Box& box,
                               double tol = 1e-8, int n0 = 17, int max_doublings = 4);

/// Integrals over the box of exp(logf(y) - logf(center)) * g_j(y), j < k, by nested
/// trapezoid refinement. g receives (y, logf(y)) and writes k values.
struct TensorIntegral {
  std::vector<double> values;
  double log_scale = 0.0;  // logf(center); multiply values by exp(log_scale) for absolute integrals
  double residual = 0.0;   // max change over the final doubling, relative to max |value|
  int nodes_per_axis = 0;
};

TensorIntegral tensor_trapezoid(const std::function<double(const Vec&)>& logf,
                                const std::function<void(const Vec&, double, double*)>& g, int k,
                                const Box& box, double tol = 1e-12, int n0 = 33, int max_doublings = 6);

/// Steps outward from box.center along each frame axis until logf drops
/// `drop` below logf(center). Returns the box with the discovered extents.
Box find_window(const std::function<double(const Vec&)>& logf, const Vec& center, const Mat& frame,
                double drop = 40.0);

/// Newton search for a maximizer of a smooth log-density. Damped with backtracking;
/// falls back to gradient ascent where the Hessian is not negative definite.
struct ModeResult {
  Vec mode;
  Mat neg_hessian;  // -Hessian at the mode (SPD when the target is log-concave there)
  int iterations = 0;
  bool converged = false;
};

ModeResult find_mode(const std::function<double(const Vec&)>& logf,
                     const std::function<Vec(const Vec&)>& grad,
                     const std::function<Mat(const Vec&)>& hess, Vec start, int max_iter = 50);

/// Frame that whitens a local Gaussian approximation with precision `neg_hessian`.
/// Non-positive curvature directions get unit scale.
Mat local_frame(const Mat& neg_hessian);

/// 1D nested trapezoid integration of K functionals on [lo, hi]; stops when every
/// component changes by less than tol * (1 + |value|).
template <std::size_t K, typename F>
std::array<double, K> trapezoid_1d(F&& f, double lo, double hi, double tol = 1e-12, int n0 = 65,
                                   int max_doublings = 10) {
  int n = n0;
  std::vector<std::array<double, K>> vals(n);
  auto at = [&](int i, int count) { return lo + (hi - lo) * i / (count - 1); };
  for (int i = 0; i < n; ++i) vals[i] = f(at(i, n));
  auto integrate = [&](int count) {
    std::array<double, K> s{};
    const double h = (hi - lo) / (count - 1);
    for (int i = 0; i < count; ++i) {
      const double w = (i == 0 || i == count - 1) ? 0.5 * h : h;
      for (std::size_t k = 0; k < K; ++k) s[k] += w * vals[i][k];
    }
    return s;
  };
  auto prev = integrate(n);
  for (int level = 0; level < max_doublings; ++level) {
    const int m = 2 * n - 1;
    std::vector<std::array<double, K>> next(m);
    for (int i = 0; i < n; ++i) next[2 * i] = vals[i];
    for (int i = 1; i < m; i += 2) next[i] = f(at(i, m));
    vals.swap(next);
    n = m;
    auto cur = integrate(n);
    bool ok = true;
    for (std::size_t k = 0; k < K; ++k) ok = ok && std::abs(cur[k] - prev[k]) <= tol * (1.0 + std::abs(cur[k]));
    if (ok) return cur;
    prev = cur;
  }
  fail(Errc::QuadratureNoConvergence, "1D trapezoid did not converge");
}

}  // namespace follmer::quad
