#pragma once

#include "follmer/core.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace follmer {

using LogFn = std::function<double(const Vec&)>;
using GradFn = std::function<Vec(const Vec&)>;
using HessFn = std::function<Mat(const Vec&)>;

/// Counter-based substream seed: mixes (master, index) through splitmix64.
std::uint64_t splitmix64(std::uint64_t master, std::uint64_t index);

/// One-dimensional log-concave factor q(u) (unnormalized) with moments,
/// an inverse-CDF table and a numerical spectral gap computed once.
class Family1D {
 public:
  enum class Type { Quartic, Logistic };

  /// exp(-a u^2/2 - b u^4); a > 0 or b > 0.
  static std::shared_ptr<const Family1D> quartic(double a, double b);
  /// Logistic with scale s: exp(-2 ln(2 cosh(u/(2s)))).
  static std::shared_ptr<const Family1D> logistic(double s);
  static std::shared_ptr<const Family1D> make(const std::string& name, const std::vector<double>& params);

  double logq(double u) const;
  double dlogq(double u) const;
  double d2logq(double u) const;

  Type type() const { return type_; }
  const std::string& name() const { return name_; }
  const std::vector<double>& params() const { return params_; }
  double log_normalizer() const { return log_z_; }
  double mean() const { return mean_; }
  double variance() const { return var_; }
  double entropy() const { return entropy_; }
  double fisher() const { return fisher_; }  // E[(ln q)'^2]
  double xi() const { return xi_; }          // inf of -(ln q)''
  double poincare() const { return poincare_; }
  bool poincare_exact() const { return poincare_exact_; }
  double lo() const { return lo_; }
  double hi() const { return hi_; }
  double inverse_cdf(double u) const;

 private:
  Family1D(Type type, std::string name, std::vector<double> params, double xi);
  void precompute();

  Type type_;
  std::string name_;
  std::vector<double> params_;
  double xi_;
  double log_z_ = 0, mean_ = 0, var_ = 0, entropy_ = 0, fisher_ = 0, poincare_ = 0;
  bool poincare_exact_ = false;
  double lo_ = 0, hi_ = 0;
  std::vector<double> grid_, dens_, cdf_;
};

enum class MeasureKind { Gaussian, Mixture, Potential };

struct GaussianComponent {
  Vec mean;
  Mat cov;
};

/// Y = map * Q + shift with Q having independent coordinates drawn from the factors.
struct ProductForm {
  std::vector<std::shared_ptr<const Family1D>> factors;
  Mat map;
  Vec shift;
  // map = rotation * diag(scales) when the columns of map are orthogonal.
  bool orthogonal_columns = false;
  Mat rotation;
  Vec scales;
};

struct MeasureData {
  int dim = 0;
  MeasureKind kind = MeasureKind::Gaussian;
  std::string label;
  std::string fingerprint;
  bool log_concave = false;

  // Mixture (a Gaussian is stored as a single component).
  std::vector<double> weights;
  std::vector<GaussianComponent> components;

  // Potential: unnormalized ln p and derivatives, already recentered.
  LogFn logp;
  GradFn grad;
  HessFn hess;
  std::optional<double> log_normalizer;
  std::optional<ProductForm> product;

  std::optional<double> xi;
  std::optional<double> poincare;
  Mat covariance;
  std::optional<double> entropy;  // differential entropy h, when computed
  std::optional<double> fisher;   // E||grad ln p||^2, when computed
};

class Measure {
 public:
  static Measure gaussian(const Mat& cov);
  /// The mean is dropped: measures are always centered.
  static Measure gaussian(const Vec& mean, const Mat& cov);
  static Measure mixture(std::vector<double> weights, std::vector<GaussianComponent> components);
  static Measure product(std::vector<std::shared_ptr<const Family1D>> factors, const Mat& map);
  /// exp(-a|u|^2/2 - b|u|^4), rotation invariant, dim 2 or 3.
  static Measure radial_quartic(int dim, double a, double b);
  /// Generic potential. Normalizer, mean and covariance come from quadrature (dim <= 2)
  /// unless log_normalizer is supplied; dim 3 without it throws UnnormalizedDensity.
  static Measure potential(int dim, LogFn logp, GradFn grad, HessFn hess,
                           std::optional<double> log_normalizer, const std::string& tag,
                           bool log_concave);

  /// Declares -Hess ln p >= xi I; validated at 100 points.
  Measure with_xi(double xi) const;
  Measure with_poincare(double c) const;
  Measure with_label(const std::string& label) const;
  /// Law of a * X.
  Measure transformed(const Mat& a) const;

  int dim() const { return d_->dim; }
  MeasureKind kind() const { return d_->kind; }
  const Mat& covariance() const { return d_->covariance; }
  double sigma_min2() const;
  double sigma_max2() const;
  std::optional<double> xi() const { return d_->xi; }
  bool log_concave() const { return d_->log_concave; }
  const std::string& fingerprint() const { return d_->fingerprint; }
  const std::string& label() const { return d_->label; }
  const MeasureData& data() const { return *d_; }

  /// Normalized ln p(x).
  double log_density(const Vec& x) const;
  Vec grad_log_density(const Vec& x) const;
  Mat hess_log_density(const Vec& x) const;
  /// True when the coordinates (in the standard basis) are independent.
  bool axis_independent() const;

 private:
  explicit Measure(std::shared_ptr<const MeasureData> d) : d_(std::move(d)) {}
  std::shared_ptr<const MeasureData> d_;
};

/// ln of the density with respect to the standard Gaussian.
double relative_log_density(const Measure& m, const Vec& x);

/// i.i.d. draws (MALA draws for non-separable potentials), deterministic in seed.
std::vector<Vec> sample(const Measure& m, std::size_t n, std::uint64_t seed);

struct MalaDiagnostics {
  double acceptance = 0;
  double ess_per_draw = 0;
  double step = 0;
};
std::vector<Vec> sample_mala(const Measure& m, std::size_t n, std::uint64_t seed, MalaDiagnostics* diag = nullptr);

enum class PoincareFlag { Exact, UpperBound, Numerical };
std::string_view poincare_flag_name(PoincareFlag f);

struct PoincareBound {
  double value = 0;
  PoincareFlag flag = PoincareFlag::Numerical;
};

PoincareBound poincare_bound(const Measure& m);

/// Spectral gap inverse of a 1D density given on a uniform grid (Neumann finite elements).
double poincare_1d_numerical(const std::vector<double>& grid, const std::vector<double>& density);

struct WhitenedPair {
  Measure x;
  Measure y;
  Mat map;
};

WhitenedPair joint_whiten(const Measure& mx, const Measure& my);

}  // namespace follmer
