#pragma once

#include "follmer/measures.hpp"

#include <vector>

namespace follmer {

/// Law of X_1 given X_t = x. The unnormalized posterior used throughout is
///   p(y) exp(<x, y>/(1-t) - t|y|^2/(2(1-t))),
/// which differs from p(y) exp(-|x - t y|^2/(2t(1-t))) by a factor depending on x only
/// and stays well defined at t = 0. log_mass is ln of its integral, so that
///   ln P_{1-t} f(x) = log_mass - (d/2) ln(1-t) - |x|^2/(2(1-t)).
struct PosteriorStats {
  double t = 0;
  Vec x;
  Vec mean;
  Mat cov;
  Mat gamma;  // cov / (1-t)
  Vec drift;  // (mean - x) / (1-t)
  double log_mass = 0;
  std::vector<double> weights;  // component responsibilities, mixtures only
};

/// Precomputes per-measure data (component eigenbases, factor tables) so that many
/// (t, x) evaluations are cheap. Const and thread-safe.
class PosteriorEngine {
 public:
  explicit PosteriorEngine(Measure m);
  PosteriorStats operator()(double t, const Vec& x) const;
  const Measure& measure() const { return m_; }

 private:
  enum class Route { Mixture, Separable, Generic };
  struct Component {
    Mat basis;    // eigenvectors of the component covariance
    Vec eig;      // eigenvalues
    Vec mean_eb;  // mean in the eigenbasis
    double log_weight;
  };

  PosteriorStats mixture(double t, const Vec& x) const;
  PosteriorStats separable(double t, const Vec& x) const;
  PosteriorStats generic(double t, const Vec& x) const;

  Measure m_;
  Route route_;
  std::vector<Component> comps_;
};

PosteriorStats posterior_moments(const Measure& m, double t, const Vec& x);

/// Posterior of a single factor: density proportional to q(u) exp(alpha u - beta u^2 / 2).
struct Posterior1D {
  double log_mass;  // ln of the integral of q(u)/Z exp(alpha u - beta u^2/2)
  double mean;
  double var;
};
Posterior1D family_posterior(const Family1D& f, double alpha, double beta);

/// ln P_{1-t} f_X(x) by brute-force quadrature of f_X against the heat kernel
/// (dim <= 2), independent of the posterior code.
double heat_log_semigroup(const Measure& m, double t, const Vec& x);

/// Gradient of ln P_{1-t} f_X at x by central differences of heat_log_semigroup,
/// step 1e-5 (1 + |x|).
Vec heat_loggrad(const Measure& m, double t, const Vec& x);

}  // namespace follmer
