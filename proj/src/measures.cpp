#include "follmer/measures.hpp"

#include "follmer/linalg.hpp"
#include "follmer/quadrature.hpp"
#include "follmer/util.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace follmer {

std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::UnnormalizedDensity: return "UnnormalizedDensity";
    case Errc::SamplerDiagnosticFailure: return "SamplerDiagnosticFailure";
    case Errc::PoincareUnavailable: return "PoincareUnavailable";
    case Errc::SingularCovariance: return "SingularCovariance";
    case Errc::QuadratureNoConvergence: return "QuadratureNoConvergence";
    case Errc::TimeOutOfRange: return "TimeOutOfRange";
    case Errc::DriftBlowup: return "DriftBlowup";
    case Errc::ConvolutionUnavailable: return "ConvolutionUnavailable";
    case Errc::NotPositiveDefinite: return "NotPositiveDefinite";
    case Errc::GridMismatch: return "GridMismatch";
    case Errc::HypothesisViolated: return "HypothesisViolated";
    case Errc::ConfigInvalid: return "ConfigInvalid";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::CacheCorrupt: return "CacheCorrupt";
  }
  return "Unknown";
}

std::uint64_t splitmix64(std::uint64_t master, std::uint64_t index) {
  std::uint64_t z = master + (index + 1) * 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// ---------------------------------------------------------------- Family1D

namespace {

double log2cosh(double z) {
  const double a = std::abs(z);
  return a + std::log1p(std::exp(-2.0 * a));
}

}  // namespace

Family1D::Family1D(Type type, std::string name, std::vector<double> params, double xi)
    : type_(type), name_(std::move(name)), params_(std::move(params)), xi_(xi) {}

std::shared_ptr<const Family1D> Family1D::quartic(double a, double b) {
  require(a >= 0 && b >= 0 && (a > 0 || b > 0), Errc::InvalidArgument,
          "quartic family needs a >= 0, b >= 0, not both zero");
  auto f = std::shared_ptr<Family1D>(new Family1D(Type::Quartic, "quartic", {a, b}, a));
  f->precompute();
  return f;
}

std::shared_ptr<const Family1D> Family1D::logistic(double s) {
  require(s > 0, Errc::InvalidArgument, "logistic scale must be positive");
  auto f = std::shared_ptr<Family1D>(new Family1D(Type::Logistic, "logistic", {s}, 0.0));
  f->precompute();
  return f;
}

std::shared_ptr<const Family1D> Family1D::make(const std::string& name, const std::vector<double>& p) {
  if (name == "quartic") {
    require(p.size() == 2, Errc::InvalidArgument, "quartic takes parameters [a, b]");
    return quartic(p[0], p[1]);
  }
  if (name == "logistic") {
    require(p.size() == 1, Errc::InvalidArgument, "logistic takes parameters [s]");
    return logistic(p[0]);
  }
  fail(Errc::InvalidArgument, "unknown family '" + name + "'");
}

double Family1D::logq(double u) const {
  switch (type_) {
    case Type::Quartic: {
      const double u2 = u * u;
      return -0.5 * params_[0] * u2 - params_[1] * u2 * u2;
    }
    case Type::Logistic: return -2.0 * log2cosh(u / (2.0 * params_[0]));
  }
  return 0.0;
}

double Family1D::dlogq(double u) const {
  switch (type_) {
    case Type::Quartic: return -params_[0] * u - 4.0 * params_[1] * u * u * u;
    case Type::Logistic: return -std::tanh(u / (2.0 * params_[0])) / params_[0];
  }
  return 0.0;
}

double Family1D::d2logq(double u) const {
  switch (type_) {
    case Type::Quartic: return -params_[0] - 12.0 * params_[1] * u * u;
    case Type::Logistic: {
      const double s = params_[0];
      const double c = std::cosh(u / (2.0 * s));
      return -1.0 / (2.0 * s * s * c * c);
    }
  }
  return 0.0;
}

void Family1D::precompute() {
  // Every built-in family is symmetric and unimodal at 0.
  const double top = logq(0.0);
  auto edge = [&](double sign) {
    double L = 1.0;
    while (logq(sign * L) > top - 45.0) L *= 1.25;
    return sign * L;
  };
  lo_ = edge(-1.0);
  hi_ = edge(1.0);

  auto m = quad::trapezoid_1d<5>(
      [&](double u) {
        const double l = logq(u);
        const double w = std::exp(l - top);
        const double g = dlogq(u);
        return std::array<double, 5>{w, w * u, w * u * u, w * l, w * g * g};
      },
      lo_, hi_, 1e-14, 257, 8);
  log_z_ = std::log(m[0]) + top;
  mean_ = m[1] / m[0];
  var_ = m[2] / m[0] - mean_ * mean_;
  entropy_ = log_z_ - m[3] / m[0];
  fisher_ = m[4] / m[0];

  const int n = 16385;
  grid_.resize(n);
  dens_.resize(n);
  cdf_.resize(n);
  const double h = (hi_ - lo_) / (n - 1);
  for (int i = 0; i < n; ++i) {
    grid_[i] = lo_ + h * i;
    dens_[i] = std::exp(logq(grid_[i]) - log_z_);
  }
  cdf_[0] = 0.0;
  for (int i = 1; i < n; ++i) cdf_[i] = cdf_[i - 1] + 0.5 * h * (dens_[i - 1] + dens_[i]);
  const double total = cdf_.back();
  for (int i = 0; i < n; ++i) {
    cdf_[i] /= total;
    dens_[i] /= total;
  }

  std::vector<double> pg(4001), pd(4001);
  const double ph = (hi_ - lo_) / 4000.0;
  for (int i = 0; i <= 4000; ++i) {
    pg[i] = lo_ + ph * i;
    pd[i] = std::exp(logq(pg[i]) - log_z_);
  }
  poincare_ = poincare_1d_numerical(pg, pd);
  if (type_ == Type::Logistic) {
    // The logistic spectral gap sits at the edge of the continuous spectrum, 1/(4 s^2);
    // a truncated window underestimates C_p, so the known value is used instead.
    poincare_ = 4.0 * params_[0] * params_[0];
    poincare_exact_ = true;
  }
}

double Family1D::inverse_cdf(double u) const {
  u = std::clamp(u, 0.0, 1.0);
  auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
  long k = std::clamp<long>(static_cast<long>(it - cdf_.begin()) - 1, 0, static_cast<long>(cdf_.size()) - 2);
  const double h = grid_[1] - grid_[0];
  const double r = u - cdf_[k];
  const double p0 = dens_[k], p1 = dens_[k + 1];
  // Density is linear on the cell: solve p0 s + (p1 - p0) s^2 / (2h) = r.
  const double disc = std::max(0.0, p0 * p0 + 2.0 * (p1 - p0) * r / h);
  const double denom = p0 + std::sqrt(disc);
  const double s = denom > 0 ? 2.0 * r / denom : 0.0;
  return grid_[k] + std::clamp(s, 0.0, h);
}

double poincare_1d_numerical(const std::vector<double>& grid, const std::vector<double>& density) {
  const int n = static_cast<int>(grid.size());
  require(n >= 3 && density.size() == grid.size(), Errc::InvalidArgument, "bad Poincare grid");
  const double h = grid[1] - grid[0];
  // Linear elements, lumped mass: K psi = lambda M psi, reduced to a symmetric tridiagonal.
  std::vector<double> mass(n), kdiag(n, 0.0), koff(n - 1);
  for (int i = 0; i < n; ++i) mass[i] = h * density[i] * ((i == 0 || i == n - 1) ? 0.5 : 1.0);
  for (int c = 0; c + 1 < n; ++c) {
    const double w = 0.5 * (density[c] + density[c + 1]) / h;
    kdiag[c] += w;
    kdiag[c + 1] += w;
    koff[c] = -w;
  }
  std::vector<double> diag(n), sub(n - 1);
  const double floor = 1e-300;
  for (int i = 0; i < n; ++i) diag[i] = kdiag[i] / std::max(mass[i], floor);
  for (int i = 0; i + 1 < n; ++i)
    sub[i] = koff[i] / std::sqrt(std::max(mass[i], floor) * std::max(mass[i + 1], floor));
  // Second-smallest eigenvalue by Sturm-sequence bisection.
  auto count_below = [&](double x) {
    int count = 0;
    double q = diag[0] - x;
    if (q < 0) ++count;
    for (int i = 1; i < n; ++i) {
      if (q == 0.0) q = 1e-300;
      q = diag[i] - x - sub[i - 1] * sub[i - 1] / q;
      if (q < 0) ++count;
    }
    return count;
  };
  double lo = 0.0, hi = 0.0;
  for (int i = 0; i < n; ++i)
    hi = std::max(hi, diag[i] + (i > 0 ? std::abs(sub[i - 1]) : 0.0) + (i + 1 < n ? std::abs(sub[i]) : 0.0));
  lo = -1e-12 * hi;
  for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (count_below(mid) >= 2)
      hi = mid;
    else
      lo = mid;
  }
  const double gap = 0.5 * (lo + hi);
  require(gap > 0, Errc::PoincareUnavailable, "numerical spectral gap is not positive");
  return 1.0 / gap;
}

// ---------------------------------------------------------------- Measure

namespace {

std::string hash_fp(const std::string& desc) { return hex64(fnv1a64(desc)); }

void fill_gaussian_metadata(MeasureData& d) {
  // Mixture or Gaussian: covariance from components.
  const int n = d.dim;
  Mat cov = Mat::Zero(n, n);
  for (std::size_t k = 0; k < d.components.size(); ++k)
    cov += d.weights[k] * (d.components[k].cov + d.components[k].mean * d.components[k].mean.transpose());
  d.covariance = linalg::symmetrize(cov);
}

std::shared_ptr<MeasureData> product_data(std::vector<std::shared_ptr<const Family1D>> factors, const Mat& map,
                                          const std::string& desc) {
  const int n = static_cast<int>(factors.size());
  require(n >= 1 && n <= kMaxDim, Errc::InvalidArgument, "product measure dimension must be 1..3");
  require(map.rows() == n && map.cols() == n, Errc::InvalidArgument, "product map has wrong shape");
  const double det = map.determinant();
  require(std::abs(det) > 1e-300, Errc::InvalidArgument, "product map is singular");

  ProductForm pf;
  pf.factors = std::move(factors);
  pf.map = map;
  Vec qmean(n), qvar(n), qxi(n), qfisher(n);
  double h = std::log(std::abs(det)), logz = std::log(std::abs(det));
  bool uniform = true;
  for (int i = 0; i < n; ++i) {
    qmean(i) = pf.factors[i]->mean();
    qvar(i) = pf.factors[i]->variance();
    qxi(i) = pf.factors[i]->xi();
    qfisher(i) = pf.factors[i]->fisher();
    h += pf.factors[i]->entropy();
    logz += pf.factors[i]->log_normalizer();
    uniform = uniform && qxi(i) > 0;
  }
  pf.shift = -map * qmean;
  const Mat gram = map.transpose() * map;
  const double gscale = gram.cwiseAbs().maxCoeff();
  bool orth = true;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j && std::abs(gram(i, j)) > 1e-12 * gscale) orth = false;
  pf.orthogonal_columns = orth;
  if (orth) {
    pf.scales = map.colwise().norm().transpose();
    pf.rotation = map * pf.scales.cwiseInverse().asDiagonal();
  }

  auto d = std::make_shared<MeasureData>();
  d->dim = n;
  d->kind = MeasureKind::Potential;
  d->log_concave = true;
  const Mat inv = map.inverse();
  d->covariance = linalg::symmetrize(Mat(map * qvar.asDiagonal() * map.transpose()));
  d->entropy = h;
  d->fisher = (inv.transpose() * qfisher.asDiagonal() * inv).trace();
  d->log_normalizer = logz;
  if (uniform) d->xi = linalg::min_eigenvalue(Mat(inv.transpose() * qxi.asDiagonal() * inv));

  auto fac = pf.factors;
  const Vec shift = pf.shift;
  d->logp = [fac, inv, shift](const Vec& y) {
    const Vec q = inv * (y - shift);
    double s = 0.0;
    for (Eigen::Index i = 0; i < q.size(); ++i) s += fac[i]->logq(q(i));
    return s;
  };
  d->grad = [fac, inv, shift](const Vec& y) {
    const Vec q = inv * (y - shift);
    Vec g(q.size());
    for (Eigen::Index i = 0; i < q.size(); ++i) g(i) = fac[i]->dlogq(q(i));
    return Vec(inv.transpose() * g);
  };
  d->hess = [fac, inv, shift](const Vec& y) {
    const Vec q = inv * (y - shift);
    Vec h2(q.size());
    for (Eigen::Index i = 0; i < q.size(); ++i) h2(i) = fac[i]->d2logq(q(i));
    return Mat(inv.transpose() * h2.asDiagonal() * inv);
  };
  std::string fdesc = desc;
  for (const auto& f : pf.factors) {
    fdesc += "|" + f->name();
    for (double p : f->params()) fdesc += ":" + fmt17(p);
  }
  fdesc += "|map" + fmt_matrix(map);
  d->fingerprint = hash_fp(fdesc);
  d->label = "product";
  d->product = std::move(pf);
  return d;
}

Mat numerical_hessian(const GradFn& grad, const Vec& x) {
  const int n = static_cast<int>(x.size());
  Mat h(n, n);
  for (int j = 0; j < n; ++j) {
    const double e = 1e-5 * (1.0 + std::abs(x(j)));
    Vec xp = x, xm = x;
    xp(j) += e;
    xm(j) -= e;
    h.col(j) = (grad(xp) - grad(xm)) / (2.0 * e);
  }
  return linalg::symmetrize(h);
}

// Normalizer, mean, covariance, entropy and Fisher information by tensor quadrature.
struct PotentialMoments {
  double log_z;
  Vec mean;
  Mat cov;
  double entropy;
  double fisher;
};

PotentialMoments potential_moments(int dim, const LogFn& logp, const GradFn& grad, const HessFn& hess) {
  require(dim <= 2, Errc::UnnormalizedDensity, "quadrature normalization limited to dim <= 2");
  auto mode = quad::find_mode(logp, grad, hess, Vec::Zero(dim));
  const Mat frame = quad::local_frame(mode.neg_hessian);
  const auto box = quad::find_window(logp, mode.mode, frame, 45.0);
  const int k = 1 + dim + dim * dim + 2;
  auto res = quad::tensor_trapezoid(
      logp,
      [&](const Vec& y, double lf, double* out) {
        out[0] = 1.0;
        for (int i = 0; i < dim; ++i) out[1 + i] = y(i);
        for (int i = 0; i < dim; ++i)
          for (int j = 0; j < dim; ++j) out[1 + dim + i * dim + j] = y(i) * y(j);
        out[1 + dim + dim * dim] = lf;
        out[2 + dim + dim * dim] = grad(y).squaredNorm();
      },
      k, box, 1e-12, 33, 6);
  const auto& v = res.values;
  PotentialMoments pm;
  pm.log_z = std::log(v[0]) + res.log_scale;
  pm.mean = Vec(dim);
  pm.cov = Mat(dim, dim);
  for (int i = 0; i < dim; ++i) pm.mean(i) = v[1 + i] / v[0];
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j < dim; ++j) pm.cov(i, j) = v[1 + dim + i * dim + j] / v[0] - pm.mean(i) * pm.mean(j);
  pm.cov = linalg::symmetrize(pm.cov);
  pm.entropy = pm.log_z - v[1 + dim + dim * dim] / v[0];
  pm.fisher = v[2 + dim + dim * dim] / v[0];
  return pm;
}

}  // namespace

Measure Measure::gaussian(const Mat& cov) {
  require(cov.rows() == cov.cols() && cov.rows() >= 1 && cov.rows() <= kMaxDim, Errc::InvalidArgument,
          "Gaussian covariance must be square, dim 1..3");
  require(linalg::is_spd(cov), Errc::NotPositiveDefinite, "Gaussian covariance is not SPD");
  auto d = std::make_shared<MeasureData>();
  d->dim = static_cast<int>(cov.rows());
  d->kind = MeasureKind::Gaussian;
  d->log_concave = true;
  d->weights = {1.0};
  d->components = {GaussianComponent{Vec::Zero(d->dim), linalg::symmetrize(cov)}};
  d->covariance = d->components[0].cov;
  d->xi = 1.0 / linalg::max_eigenvalue(d->covariance);
  d->entropy = 0.5 * (d->dim * std::log(2.0 * M_PI * M_E) + linalg::log_det_spd(d->covariance));
  d->fisher = d->covariance.inverse().trace();
  d->fingerprint = hash_fp("gaussian" + fmt_matrix(d->covariance));
  d->label = "gaussian";
  return Measure(d);
}

Measure Measure::gaussian(const Vec& mean, const Mat& cov) {
  require(mean.size() == cov.rows(), Errc::InvalidArgument, "mean/covariance size mismatch");
  return gaussian(cov);
}

Measure Measure::mixture(std::vector<double> weights, std::vector<GaussianComponent> comps) {
  require(!weights.empty() && weights.size() == comps.size(), Errc::InvalidArgument,
          "mixture weights and components must be non-empty and of equal length");
  double total = 0.0;
  for (double w : weights) {
    require(w >= 0, Errc::InvalidArgument, "mixture weights must be nonnegative");
    total += w;
  }
  require(std::abs(total - 1.0) <= 1e-12, Errc::InvalidArgument, "mixture weights must sum to 1");
  const int n = static_cast<int>(comps[0].mean.size());
  require(n >= 1 && n <= kMaxDim, Errc::InvalidArgument, "mixture dimension must be 1..3");
  Vec center = Vec::Zero(n);
  for (std::size_t k = 0; k < comps.size(); ++k) {
    require(comps[k].mean.size() == n && comps[k].cov.rows() == n && comps[k].cov.cols() == n,
            Errc::InvalidArgument, "mixture component size mismatch");
    require(linalg::is_spd(comps[k].cov), Errc::NotPositiveDefinite, "mixture component covariance is not SPD");
    center += weights[k] * comps[k].mean;
  }
  auto d = std::make_shared<MeasureData>();
  d->dim = n;
  d->kind = MeasureKind::Mixture;
  d->log_concave = comps.size() == 1;
  d->weights = std::move(weights);
  std::string desc = "mixture";
  for (auto& c : comps) {
    c.mean -= center;
    c.cov = linalg::symmetrize(c.cov);
  }
  for (std::size_t k = 0; k < comps.size(); ++k)
    desc += "|" + fmt17(d->weights[k]) + fmt_matrix(comps[k].mean) + fmt_matrix(comps[k].cov);
  d->components = std::move(comps);
  fill_gaussian_metadata(*d);
  d->fingerprint = hash_fp(desc);
  d->label = "mixture";
  return Measure(d);
}

Measure Measure::product(std::vector<std::shared_ptr<const Family1D>> factors, const Mat& map) {
  return Measure(product_data(std::move(factors), map, "product"));
}

Measure Measure::radial_quartic(int dim, double a, double b) {
  require(dim >= 2 && dim <= 3, Errc::InvalidArgument, "radial quartic needs dim 2 or 3");
  require(a >= 0 && b >= 0 && (a > 0 || b > 0), Errc::InvalidArgument, "radial quartic needs a, b >= 0");
  LogFn logp = [a, b](const Vec& u) {
    const double r2 = u.squaredNorm();
    return -0.5 * a * r2 - b * r2 * r2;
  };
  GradFn grad = [a, b](const Vec& u) { return Vec(-(a + 4.0 * b * u.squaredNorm()) * u); };
  HessFn hess = [a, b](const Vec& u) {
    const int n = static_cast<int>(u.size());
    return Mat(-(a + 4.0 * b * u.squaredNorm()) * Mat::Identity(n, n) - 8.0 * b * u * u.transpose());
  };
  // Radial integrals in r = e^s, which makes both ends decay smoothly.
  const double lo = -40.0;
  double hi = 0.0;
  while (-0.5 * a * std::exp(2 * hi) - b * std::exp(4 * hi) > -60.0) hi += 0.25;
  auto m = quad::trapezoid_1d<5>(
      [&](double s) {
        const double r = std::exp(s);
        const double r2 = r * r;
        const double lf = -0.5 * a * r2 - b * r2 * r2;
        const double w = std::pow(r, dim) * std::exp(lf);
        const double g = a * r + 4.0 * b * r2 * r;
        return std::array<double, 5>{w, w * r2, w * lf, w * g * g, 0.0};
      },
      lo, hi, 1e-14, 513, 8);
  const double sphere = dim == 2 ? 2.0 * M_PI : 4.0 * M_PI;
  const double logz = std::log(sphere * m[0]);
  auto d = std::make_shared<MeasureData>();
  d->dim = dim;
  d->kind = MeasureKind::Potential;
  d->log_concave = true;
  d->logp = logp;
  d->grad = grad;
  d->hess = hess;
  d->log_normalizer = logz;
  d->covariance = (m[1] / m[0] / dim) * Mat::Identity(dim, dim);
  d->entropy = logz - m[2] / m[0];
  d->fisher = m[3] / m[0];
  if (a > 0) d->xi = a;
  d->fingerprint = hash_fp("radial-quartic|" + std::to_string(dim) + "|" + fmt17(a) + "|" + fmt17(b));
  d->label = "radial-quartic";
  return Measure(d);
}

Measure Measure::potential(int dim, LogFn logp, GradFn grad, HessFn hess, std::optional<double> log_normalizer,
                           const std::string& tag, bool log_concave) {
  require(dim >= 1 && dim <= kMaxDim, Errc::InvalidArgument, "potential dimension must be 1..3");
  require(static_cast<bool>(logp) && static_cast<bool>(grad), Errc::InvalidArgument,
          "potential needs log-density and gradient");
  if (!hess) hess = [grad](const Vec& x) { return numerical_hessian(grad, x); };
  if (dim == 3 && !log_normalizer)
    fail(Errc::UnnormalizedDensity, "dim 3 potential needs a supplied log-normalizer");
  require(dim <= 2, Errc::InvalidArgument, "generic potentials beyond dim 2 are not supported");
  auto pm = potential_moments(dim, logp, grad, hess);
  auto d = std::make_shared<MeasureData>();
  d->dim = dim;
  d->kind = MeasureKind::Potential;
  d->log_concave = log_concave;
  const Vec c = pm.mean;
  d->logp = [logp, c](const Vec& y) { return logp(Vec(y + c)); };
  d->grad = [grad, c](const Vec& y) { return grad(Vec(y + c)); };
  d->hess = [hess, c](const Vec& y) { return hess(Vec(y + c)); };
  d->log_normalizer = log_normalizer ? *log_normalizer : pm.log_z;
  d->covariance = pm.cov;
  d->entropy = pm.entropy;
  d->fisher = pm.fisher;
  d->fingerprint = hash_fp("potential|" + tag);
  d->label = tag;
  return Measure(d);
}

Measure Measure::with_xi(double xi) const {
  require(xi >= 0, Errc::InvalidArgument, "xi must be nonnegative");
  std::mt19937_64 rng(splitmix64(0x5eedULL, 17));
  std::normal_distribution<double> nd;
  const Mat l = Eigen::LLT<Mat>(covariance()).matrixL();
  for (int k = 0; k < 100; ++k) {
    Vec z(dim());
    for (int i = 0; i < dim(); ++i) z(i) = 2.0 * nd(rng);
    const Vec y = l * z;
    const double lam = linalg::min_eigenvalue(Mat(-hess_log_density(y)));
    require(lam >= xi - 1e-6, Errc::HypothesisViolated,
            "declared xi = " + fmt17(xi) + " violated: -Hess ln p has eigenvalue " + fmt17(lam));
  }
  auto d = std::make_shared<MeasureData>(*d_);
  d->xi = xi > 0 ? std::optional<double>(xi) : std::nullopt;
  if (xi > 0) d->log_concave = true;
  d->fingerprint = hash_fp(d_->fingerprint + "|xi" + fmt17(xi));
  return Measure(d);
}

Measure Measure::with_poincare(double c) const {
  require(c > 0, Errc::InvalidArgument, "Poincare constant must be positive");
  auto d = std::make_shared<MeasureData>(*d_);
  d->poincare = c;
  d->fingerprint = hash_fp(d_->fingerprint + "|cp" + fmt17(c));
  return Measure(d);
}

Measure Measure::with_label(const std::string& label) const {
  auto d = std::make_shared<MeasureData>(*d_);
  d->label = label;
  return Measure(d);
}

Measure Measure::transformed(const Mat& a) const {
  require(a.rows() == dim() && a.cols() == dim(), Errc::InvalidArgument, "transform has wrong shape");
  const double det = a.determinant();
  require(std::abs(det) > 1e-300, Errc::InvalidArgument, "transform is singular");
  const double opn2 = std::pow(linalg::operator_norm(a), 2);
  std::optional<double> cp;
  if (d_->poincare) cp = *d_->poincare * opn2;

  Measure out = [&]() -> Measure {
    switch (kind()) {
      case MeasureKind::Gaussian: return gaussian(Mat(a * covariance() * a.transpose()));
      case MeasureKind::Mixture: {
        auto comps = d_->components;
        for (auto& c : comps) {
          c.mean = a * c.mean;
          c.cov = a * c.cov * a.transpose();
        }
        auto m = mixture(d_->weights, comps);
        return m;
      }
      case MeasureKind::Potential: break;
    }
    if (d_->product) {
      auto d = product_data(d_->product->factors, Mat(a * d_->product->map), "product");
      if (d_->xi && !d->xi) d->xi = *d_->xi / opn2;
      d->label = d_->label;
      return Measure(d);
    }
    auto d = std::make_shared<MeasureData>(*d_);
    const Mat inv = a.inverse();
    const LogFn lp = d_->logp;
    const GradFn gr = d_->grad;
    const HessFn he = d_->hess;
    d->logp = [lp, inv](const Vec& y) { return lp(Vec(inv * y)); };
    d->grad = [gr, inv](const Vec& y) { return Vec(inv.transpose() * gr(Vec(inv * y))); };
    d->hess = [he, inv](const Vec& y) { return Mat(inv.transpose() * he(Vec(inv * y)) * inv); };
    if (d_->log_normalizer) d->log_normalizer = *d_->log_normalizer + std::log(std::abs(det));
    d->covariance = linalg::symmetrize(Mat(a * d_->covariance * a.transpose()));
    if (d_->entropy) d->entropy = *d_->entropy + std::log(std::abs(det));
    d->fisher.reset();
    if (d_->xi) d->xi = *d_->xi / opn2;
    d->fingerprint = hash_fp(d_->fingerprint + "|map" + fmt_matrix(a));
    return Measure(d);
  }();
  if (cp) {
    auto d = std::make_shared<MeasureData>(out.data());
    d->poincare = cp;
    d->fingerprint = hash_fp(d->fingerprint + "|cp" + fmt17(*cp));
    return Measure(d);
  }
  return out;
}

double Measure::sigma_min2() const { return linalg::min_eigenvalue(covariance()); }
double Measure::sigma_max2() const { return linalg::max_eigenvalue(covariance()); }

namespace {

// log N(x; mu, S) and its gradient for a mixture, via log-sum-exp.
struct MixtureEval {
  double logp;
  Vec grad;
  Mat hess;
};

MixtureEval mixture_eval(const MeasureData& d, const Vec& x, bool want_hess) {
  const int n = d.dim;
  const std::size_t K = d.components.size();
  std::vector<double> lw(K);
  std::vector<Vec> g(K);
  std::vector<Mat> prec(K);
  double mx = -INFINITY;
  for (std::size_t k = 0; k < K; ++k) {
    const auto& c = d.components[k];
    Eigen::LLT<Mat> llt(c.cov);
    const Vec r = x - c.mean;
    const Vec s = llt.solve(r);
    prec[k] = llt.solve(Mat::Identity(n, n));
    const double ld = 2.0 * Mat(llt.matrixL()).diagonal().array().log().sum();
    lw[k] = std::log(d.weights[k]) - 0.5 * (r.dot(s) + ld + n * std::log(2.0 * M_PI));
    g[k] = -s;
    mx = std::max(mx, lw[k]);
  }
  double tot = 0.0;
  for (auto v : lw) tot += std::exp(v - mx);
  MixtureEval e;
  e.logp = mx + std::log(tot);
  e.grad = Vec::Zero(n);
  std::vector<double> pi(K);
  for (std::size_t k = 0; k < K; ++k) {
    pi[k] = std::exp(lw[k] - e.logp);
    e.grad += pi[k] * g[k];
  }
  if (want_hess) {
    e.hess = Mat::Zero(n, n);
    for (std::size_t k = 0; k < K; ++k) e.hess += pi[k] * (-prec[k] + g[k] * g[k].transpose());
    e.hess -= e.grad * e.grad.transpose();
  }
  return e;
}

}  // namespace

double Measure::log_density(const Vec& x) const {
  require(x.size() == dim(), Errc::InvalidArgument, "point has wrong dimension");
  if (kind() != MeasureKind::Potential) return mixture_eval(*d_, x, false).logp;
  if (!d_->log_normalizer) fail(Errc::UnnormalizedDensity, "log-normalizer unavailable");
  return d_->logp(x) - *d_->log_normalizer;
}

Vec Measure::grad_log_density(const Vec& x) const {
  if (kind() != MeasureKind::Potential) return mixture_eval(*d_, x, false).grad;
  return d_->grad(x);
}

Mat Measure::hess_log_density(const Vec& x) const {
  if (kind() != MeasureKind::Potential) return mixture_eval(*d_, x, true).hess;
  return d_->hess(x);
}

bool Measure::axis_independent() const {
  auto diag_only = [](const Mat& m) {
    const double s = m.cwiseAbs().maxCoeff();
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j)
        if (i != j && std::abs(m(i, j)) > 1e-14 * s) return false;
    return true;
  };
  if (dim() == 1) return true;
  if (kind() == MeasureKind::Gaussian) return diag_only(covariance());
  if (d_->product) return diag_only(d_->product->map);
  return false;
}

double relative_log_density(const Measure& m, const Vec& x) {
  return m.log_density(x) + 0.5 * x.squaredNorm() + 0.5 * m.dim() * std::log(2.0 * M_PI);
}

// ---------------------------------------------------------------- sampling

std::vector<Vec> sample(const Measure& m, std::size_t n, std::uint64_t seed) {
  require(n >= 1, Errc::InvalidArgument, "sample count must be positive");
  const auto& d = m.data();
  std::vector<Vec> out(n);
  if (m.kind() != MeasureKind::Potential) {
    std::vector<Mat> chol;
    for (const auto& c : d.components) chol.emplace_back(Eigen::LLT<Mat>(c.cov).matrixL());
    std::vector<double> cum(d.weights.size());
    std::partial_sum(d.weights.begin(), d.weights.end(), cum.begin());
    for (std::size_t i = 0; i < n; ++i) {
      std::mt19937_64 rng(splitmix64(seed, i));
      std::size_t k = 0;
      if (d.components.size() > 1) {
        const double u = std::uniform_real_distribution<double>(0.0, cum.back())(rng);
        k = std::min<std::size_t>(std::upper_bound(cum.begin(), cum.end(), u) - cum.begin(), cum.size() - 1);
      }
      std::normal_distribution<double> nd;
      Vec z(d.dim);
      for (int j = 0; j < d.dim; ++j) z(j) = nd(rng);
      out[i] = d.components[k].mean + chol[k] * z;
    }
    return out;
  }
  if (d.product) {
    const auto& pf = *d.product;
    for (std::size_t i = 0; i < n; ++i) {
      std::mt19937_64 rng(splitmix64(seed, i));
      std::uniform_real_distribution<double> ud(0.0, 1.0);
      Vec q(d.dim);
      for (int j = 0; j < d.dim; ++j) q(j) = pf.factors[j]->inverse_cdf(ud(rng));
      out[i] = pf.map * q + pf.shift;
    }
    return out;
  }
  return sample_mala(m, n, seed);
}

namespace {

// Effective sample size of a scalar chain via Geyer's initial positive sequence.
double ess_scalar(const std::vector<double>& x) {
  const std::size_t n = x.size();
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double c0 = 0.0;
  for (double v : x) c0 += (v - mean) * (v - mean);
  c0 /= n;
  if (c0 <= 0) return static_cast<double>(n);
  auto acf = [&](std::size_t lag) {
    double s = 0.0;
    for (std::size_t i = 0; i + lag < n; ++i) s += (x[i] - mean) * (x[i + lag] - mean);
    return s / n / c0;
  };
  double tau = -1.0;
  for (std::size_t k = 0; k + 1 < n && k < 2000; k += 2) {
    const double pair = acf(k) + acf(k + 1);
    if (pair <= 0) break;
    tau += 2.0 * pair;
  }
  return n / std::max(tau, 1.0 / n);
}

}  // namespace

std::vector<Vec> sample_mala(const Measure& m, std::size_t n, std::uint64_t seed, MalaDiagnostics* diag) {
  const auto& d = m.data();
  const int dim = d.dim;
  const Mat pre = m.covariance();
  const Mat l = Eigen::LLT<Mat>(pre).matrixL();
  auto logp = [&](const Vec& y) { return m.kind() == MeasureKind::Potential ? d.logp(y) : m.log_density(y); };
  auto grad = [&](const Vec& y) { return m.grad_log_density(y); };

  std::mt19937_64 rng(splitmix64(seed, 0xA11A));
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  Vec y = Vec::Zero(dim);
  double ly = logp(y);
  Vec gy = grad(y);
  double h = 1.0;

  auto step = [&](double hh) {
    Vec z(dim);
    for (int i = 0; i < dim; ++i) z(i) = nd(rng);
    const Vec fwd = y + 0.5 * hh * pre * gy;
    const Vec prop = fwd + std::sqrt(hh) * l * z;
    const double lp = logp(prop);
    const Vec gp = grad(prop);
    const Vec back = prop + 0.5 * hh * pre * gp;
    const Vec rf = l.triangularView<Eigen::Lower>().solve(Vec(prop - fwd));
    const Vec rb = l.triangularView<Eigen::Lower>().solve(Vec(y - back));
    const double log_alpha = lp - ly - (rb.squaredNorm() - rf.squaredNorm()) / (2.0 * hh);
    const bool accept = std::isfinite(lp) && std::log(ud(rng)) < log_alpha;
    if (accept) {
      y = prop;
      ly = lp;
      gy = gp;
    }
    return std::isfinite(log_alpha) ? std::min(1.0, std::exp(log_alpha)) : 0.0;
  };

  const int burn = 10000;
  for (int k = 0; k < burn; ++k) {
    const double a = step(h);
    h *= std::exp((a - 0.574) / std::pow(1.0 + k, 0.6));
    h = std::clamp(h, 1e-6, 50.0);
  }
  const int thin = 10;
  std::vector<Vec> out(n);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (int t = 0; t < thin; ++t) acc += step(h);
    out[i] = y;
  }
  const double rate = acc / (static_cast<double>(n) * thin);
  double ess = static_cast<double>(n);
  if (n >= 100) {
    for (int j = 0; j < dim; ++j) {
      std::vector<double> c(n);
      for (std::size_t i = 0; i < n; ++i) c[i] = out[i](j);
      ess = std::min(ess, ess_scalar(c));
    }
  }
  if (diag) *diag = MalaDiagnostics{rate, ess / n, h};
  require(rate >= 0.3 && rate <= 0.8, Errc::SamplerDiagnosticFailure,
          "MALA acceptance " + fmt17(rate) + " outside [0.3, 0.8]");
  require(ess / n >= 0.1, Errc::SamplerDiagnosticFailure, "MALA effective sample size per draw " + fmt17(ess / n));
  return out;
}

// ---------------------------------------------------------------- Poincare

std::string_view poincare_flag_name(PoincareFlag f) {
  switch (f) {
    case PoincareFlag::Exact: return "exact";
    case PoincareFlag::UpperBound: return "upper_bound";
    case PoincareFlag::Numerical: return "numerical";
  }
  return "numerical";
}

PoincareBound poincare_bound(const Measure& m) {
  const auto& d = m.data();
  if (d.poincare) return {*d.poincare, PoincareFlag::UpperBound};
  if (m.kind() == MeasureKind::Gaussian) return {m.sigma_max2(), PoincareFlag::Exact};
  if (d.xi && *d.xi > 0) return {1.0 / *d.xi, PoincareFlag::UpperBound};
  if (d.product) {
    const auto& pf = *d.product;
    double best = 0.0;
    bool exact = pf.orthogonal_columns;
    for (std::size_t i = 0; i < pf.factors.size(); ++i) {
      const double s2 = pf.orthogonal_columns ? pf.scales(i) * pf.scales(i) : 1.0;
      best = std::max(best, s2 * pf.factors[i]->poincare());
      exact = exact && pf.factors[i]->poincare_exact();
    }
    if (!pf.orthogonal_columns) return {best * std::pow(linalg::operator_norm(pf.map), 2), PoincareFlag::UpperBound};
    return {best, exact ? PoincareFlag::Exact : PoincareFlag::Numerical};
  }
  if (m.dim() == 1) {
    // Density on a window covering the bulk.
    const double sd = std::sqrt(m.sigma_max2());
    double lo = -8.0 * sd, hi = 8.0 * sd;
    const double top = m.log_density(Vec::Zero(1));
    auto at = [&](double u) { return m.log_density(Vec::Constant(1, u)); };
    while (at(lo) > top - 45.0) lo *= 1.25;
    while (at(hi) > top - 45.0) hi *= 1.25;
    const int n = 4001;
    std::vector<double> g(n), p(n);
    for (int i = 0; i < n; ++i) {
      g[i] = lo + (hi - lo) * i / (n - 1);
      p[i] = std::exp(at(g[i]));
    }
    return {poincare_1d_numerical(g, p), PoincareFlag::Numerical};
  }
  fail(Errc::PoincareUnavailable, "no Poincare route for this measure");
}

WhitenedPair joint_whiten(const Measure& mx, const Measure& my) {
  require(mx.dim() == my.dim(), Errc::InvalidArgument, "whitening needs equal dimensions");
  const Mat avg = linalg::symmetrize(Mat(0.5 * (mx.covariance() + my.covariance())));
  require(linalg::min_eigenvalue(avg) >= 1e-12, Errc::SingularCovariance, "averaged covariance is singular");
  const Mat a = linalg::inv_sqrtm_spd(avg);
  return {mx.transformed(a), my.transformed(a), a};
}

}  // namespace follmer
