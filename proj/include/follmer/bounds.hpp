#pragma once

#include "follmer/entropy.hpp"
#include "follmer/measures.hpp"
#include "follmer/report.hpp"
#include "follmer/simulate.hpp"

#include <Eigen/Dense>

namespace follmer {

/// Both sides of the trace identity
///   Tr(sqrt(lA^2 + (1-l)B^2) - (lA + (1-l)B)) = l(1-l) Tr((A-B)^2 (sqrt(...) + lA + (1-l)B)^{-1}).
/// Any dimension; throws NotPositiveDefinite.
struct MatrixGap {
  double lhs = 0;
  double rhs = 0;
};
MatrixGap matrix_gap(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double lambda);

/// Upper envelope c_t with Gamma_t <= c_t I: 1/t for log-concave inputs, 1/((1-t) xi + t) for
/// xi-uniformly log-concave inputs.
enum class CtRule { LogConcave, Uniform };
double ct_value(CtRule rule, double t, double xi);

/// Time integral of l(1-l) Tr E[(GX - GY)^2 (sqrt(...) + ...)^{-1}] / (1-t) over the grid, paths paired
/// by index. The integrand is nonnegative, so the truncated integral is itself a lower bound for
/// the deficit; inputs["tail_estimate"] records eps times the last integrand value.
BoundResult jump_bound(const PathEnsemble& ex, const PathEnsemble& ey, double lambda);

/// l(1-l)/2 int Tr E[(GX - GY)^2] / ((1-t) c_t) dt. Throws HypothesisViolated if a sample breaks
/// Gamma <= c_t I beyond a relative tolerance of 1e-6.
BoundResult jump_bound_ct(const PathEnsemble& ex, const PathEnsemble& ey, double lambda, CtRule rule,
                          double xi = 1.0);

/// Cov(G) = int_0^1 E[Gamma_t]^2 dt. se is an entrywise batch-means standard error.
struct Surrogate {
  Mat cov;
  Mat se;
  double residual = 0;
  std::vector<Mat> batch_cov;  // per-batch surrogates, for error propagation
};
Surrogate gaussian_surrogate(const MomentCurve& c);
std::pair<Surrogate, Surrogate> gaussian_surrogates(const MomentCurve& cx, const MomentCurve& cy);

/// Stability bound for 1-uniformly log-concave pairs with surrogate Gaussians.
BoundResult thm1_rhs(const Measure& mx, const Measure& my, const MomentCurve& cx, const MomentCurve& cy,
                     double lambda);

/// Isotropic xi-uniformly log-concave version. cx, cy are curves of sqrt(xi) X and sqrt(xi) Y,
/// whose surrogates are scaled back by 1/xi.
BoundResult cor2_rhs(const Measure& mx, const Measure& my, const MomentCurve& cx, const MomentCurve& cy,
                     double lambda, double xi);

/// General log-concave bound with the explicit constant xi^3/2,
/// xi = min(sx2, sy2) / (3 (2 Cp + 1)). Needs Cov X + Cov Y = 2I.
BoundResult thm3_rhs(const Measure& mx, const Measure& my, double lambda, const EntropyEstimate& dx,
                     const EntropyEstimate& dy);

/// Low-entropy bound l(1-l)/(36 cp) (DX + DY) for isotropic log-concave pairs with D <= 1/4.
BoundResult thm4_rhs(const Measure& mx, const Measure& my, double lambda, const EntropyEstimate& dx,
                     const EntropyEstimate& dy, double cp);

/// Coefficient of D(X||G) in the bound for X against a standard Gaussian. Continuous at cp = 1,
/// where it equals l(1-l).
double thm5_coefficient(double lambda, double cp);
BoundResult thm5_rhs(const Measure& mx, double lambda, const EntropyEstimate& dx, double cp);

/// l(1-l)/2 (int Tr Var GX + int Tr Var GY + int Tr (E GX - E GY)^2) dt.
BoundResult wasserstein_thm_rhs(const Measure& mx, const Measure& my, const MomentCurve& cx,
                                const MomentCurve& cy, double lambda);

/// D / (8 Cp) for X = Y, l = 1/2. Display only: prior result, never certified here.
BoundResult entropy_jump_display(const Measure& mx, const EntropyEstimate& dx);

}  // namespace follmer
