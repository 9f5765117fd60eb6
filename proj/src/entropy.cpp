#include "follmer/entropy.hpp"

#include "follmer/linalg.hpp"
#include "follmer/quadrature.hpp"
#include "follmer/util.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>

namespace follmer {

std::string_view entropy_route_name(EntropyRoute r) {
  switch (r) {
    case EntropyRoute::DirectQuadrature: return "direct-quadrature";
    case EntropyRoute::DriftEnergy: return "drift-energy";
    case EntropyRoute::GammaIdentity: return "gamma-identity";
    case EntropyRoute::GaussianClosedForm: return "gaussian-closed-form";
  }
  return "?";
}

double gaussian_kl(const Mat& a, const Mat& b) {
  const int d = static_cast<int>(a.rows());
  const Mat binv = b.inverse();
  return 0.5 * ((binv * a).trace() - d + linalg::log_det_spd(b) - linalg::log_det_spd(a));
}

double gaussian_w2_squared(const Mat& a, const Mat& b) {
  const Mat ra = linalg::sqrtm_psd(a);
  const Mat cross = linalg::sqrtm_psd(Mat(ra * b * ra));
  return std::max(0.0, (a + b - 2.0 * cross).trace());
}

double differential_entropy(const Measure& m, double d_rel) {
  return 0.5 * m.dim() * std::log(2.0 * M_PI) + 0.5 * m.covariance().trace() - d_rel;
}

// ---------------------------------------------------------------- quadrature helpers

namespace {

// Gauss-Hermite expectation of g under the mixture at n and 2n nodes per axis.
struct GhPair {
  double fine;
  double coarse;
};

GhPair mixture_expectation(const Measure& m, const std::function<double(const Vec&)>& g) {
  const auto& d = m.data();
  const int n = m.dim() == 1 ? 64 : m.dim() == 2 ? 48 : 24;
  GhPair r{0, 0};
  for (std::size_t k = 0; k < d.components.size(); ++k) {
    const auto& c = d.components[k];
    r.coarse += d.weights[k] * quad::gaussian_expectation(c.mean, c.cov, n / 2, g);
    r.fine += d.weights[k] * quad::gaussian_expectation(c.mean, c.cov, n, g);
  }
  return r;
}

// Integral of exp(log_density) * g over the plane or line, dim <= 2.
double potential_expectation(const Measure& m, const std::function<double(const Vec&, double)>& g) {
  require(m.dim() <= 2, Errc::InvalidArgument, "quadrature expectations need dim <= 2");
  auto logf = [&](const Vec& y) { return m.log_density(y); };
  const Mat frame = linalg::sqrtm_psd(m.covariance());
  const auto box = quad::find_window(logf, Vec::Zero(m.dim()), frame, 46.0);
  auto r = quad::tensor_trapezoid(
      logf, [&](const Vec& y, double lf, double* out) { out[0] = 1.0; out[1] = g(y, lf); }, 2, box, 1e-11, 33, 6);
  return r.values[1] / r.values[0];
}

}  // namespace

std::optional<double> relative_fisher(const Measure& m) {
  const auto& d = m.data();
  const int n = m.dim();
  const double tc = m.covariance().trace();
  if (d.fisher) return *d.fisher - 2.0 * n + tc;
  if (m.kind() == MeasureKind::Mixture) {
    auto r = mixture_expectation(m, [&](const Vec& y) { return m.grad_log_density(y).squaredNorm(); });
    return r.fine - 2.0 * n + tc;
  }
  if (m.kind() == MeasureKind::Potential && n <= 2) {
    const double j = potential_expectation(m, [&](const Vec& y, double) { return m.grad_log_density(y).squaredNorm(); });
    return j - 2.0 * n + tc;
  }
  return std::nullopt;
}

EntropyEstimate relative_entropy_direct(const Measure& m, const Mat& ref) {
  require(ref.rows() == m.dim() && ref.cols() == m.dim(), Errc::InvalidArgument, "reference has wrong shape");
  require(linalg::is_spd(ref), Errc::NotPositiveDefinite, "reference covariance is not SPD");
  EntropyEstimate e;
  e.route = EntropyRoute::DirectQuadrature;
  const double cross = 0.5 * (m.dim() * std::log(2.0 * M_PI) + linalg::log_det_spd(ref)) +
                       0.5 * (ref.inverse() * m.covariance()).trace();
  switch (m.kind()) {
    case MeasureKind::Gaussian:
      e.route = EntropyRoute::GaussianClosedForm;
      e.value = gaussian_kl(m.covariance(), ref);
      return e;
    case MeasureKind::Mixture: {
      auto r = mixture_expectation(m, [&](const Vec& y) { return m.log_density(y); });
      e.value = r.fine + cross;
      e.stderr_ = std::abs(r.fine - r.coarse);
      break;
    }
    case MeasureKind::Potential: {
      if (m.data().entropy) {
        e.value = -*m.data().entropy + cross;
        e.stderr_ = 1e-10 * (1.0 + std::abs(e.value));
      } else {
        require(m.dim() <= 2, Errc::QuadratureNoConvergence, "no entropy available for this measure");
        const double el = potential_expectation(m, [](const Vec&, double lf) { return lf; });
        e.value = el + cross;
        e.stderr_ = 1e-9 * (1.0 + std::abs(e.value));
      }
      break;
    }
  }
  e.value = std::max(e.value, 0.0);
  return e;
}

EntropyEstimate relative_entropy_direct(const Measure& m) {
  return relative_entropy_direct(m, Mat::Identity(m.dim(), m.dim()));
}

// ---------------------------------------------------------------- Monte Carlo routes

namespace {

struct Tail {
  double bound;
  bool certified;
};

// Bound on half the integral of E|v_t|^2 - E|v_last|^2 over [1-eps, 1]. E|v_t|^2 increases to
// the relative Fisher information.
Tail tail_term(const Measure& m, const MomentCurve& c) {
  const double eps = c.grid.epsilon();
  const double last = c.e_v2.back();
  if (auto fisher = relative_fisher(m)) return {0.5 * eps * std::max(0.0, *fisher - last + 2.0 * c.se_v2.back()), true};
  return {0.5 * eps * (last + 2.0 * c.se_v2.back()), false};
}

void check_curve(const Measure& m, const MomentCurve& c) {
  require(c.dim == m.dim(), Errc::InvalidArgument, "curve dimension does not match the measure");
}

}  // namespace

EntropyEstimate relative_entropy_drift(const Measure& m, const MomentCurve& c) {
  check_curve(m, c);
  EntropyEstimate e;
  e.route = EntropyRoute::DriftEnergy;
  std::vector<double> half(c.e_v2.size());
  for (std::size_t k = 0; k < half.size(); ++k) half[k] = 0.5 * c.e_v2[k];
  const auto q = c.grid.integrate(half, IntegrateIn::T);
  auto w = c.grid.weights(IntegrateIn::T, 0, c.grid.size() - 1);
  // Tail estimate eps/2 E|v_last|^2 folded into the last weight.
  w.back() += 0.5 * c.grid.epsilon();
  auto ci = weighted_batch_sum(
      c, w, 0, [&](std::size_t k, int b) { return 0.5 * c.batch_v2[k][b]; }, [&](std::size_t k) { return half[k]; });
  e.value = ci.value;
  e.stderr_ = ci.stderr_;
  e.residual = q.residual;
  const auto t = tail_term(m, c);
  e.tail_bound = t.bound;
  e.tail_certified = t.certified;
  return e;
}

EntropyEstimate relative_entropy_gamma(const Measure& m, const MomentCurve& c) {
  check_curve(m, c);
  EntropyEstimate e;
  e.route = EntropyRoute::GammaIdentity;
  std::vector<double> half(c.tr_dev2.size());
  for (std::size_t k = 0; k < half.size(); ++k) half[k] = 0.5 * c.tr_dev2[k];
  const auto q = c.grid.integrate(half, IntegrateIn::S);
  const auto w = c.grid.weights(IntegrateIn::S, 0, c.grid.size() - 1);
  auto ci = weighted_batch_sum(
      c, w, 0, [&](std::size_t k, int b) { return 0.5 * c.batch_dev2[k][b]; }, [&](std::size_t k) { return half[k]; });
  e.value = ci.value;
  e.stderr_ = ci.stderr_;
  e.residual = q.residual;
  const auto t = tail_term(m, c);
  e.tail_bound = t.bound;
  e.tail_certified = t.certified;
  return e;
}

EntropyEstimate relative_entropy_drift(const Measure& m, const PathEnsemble& e) {
  require(e.fingerprint == m.fingerprint(), Errc::InvalidArgument, "ensemble was built from another measure");
  return relative_entropy_drift(m, moment_curve(e));
}

EntropyEstimate relative_entropy_gamma(const Measure& m, const PathEnsemble& e) {
  require(e.fingerprint == m.fingerprint(), Errc::InvalidArgument, "ensemble was built from another measure");
  return relative_entropy_gamma(m, moment_curve(e));
}

// ---------------------------------------------------------------- convolution

std::optional<Measure> convolve_closed_form(const Measure& mx, const Measure& my, double lambda) {
  if (mx.kind() == MeasureKind::Potential || my.kind() == MeasureKind::Potential) return std::nullopt;
  const double a = std::sqrt(lambda), b = std::sqrt(1.0 - lambda);
  const auto& dx = mx.data();
  const auto& dy = my.data();
  if (dx.components.size() == 1 && dy.components.size() == 1)
    return Measure::gaussian(Mat(lambda * dx.components[0].cov + (1.0 - lambda) * dy.components[0].cov));
  std::vector<double> w;
  std::vector<GaussianComponent> comps;
  for (std::size_t i = 0; i < dx.components.size(); ++i)
    for (std::size_t j = 0; j < dy.components.size(); ++j) {
      w.push_back(dx.weights[i] * dy.weights[j]);
      comps.push_back({Vec(a * dx.components[i].mean + b * dy.components[j].mean),
                       Mat(lambda * dx.components[i].cov + (1.0 - lambda) * dy.components[j].cov)});
    }
  return Measure::mixture(w, comps);
}

Measure axis_marginal(const Measure& m, int axis) {
  require(m.axis_independent(), Errc::InvalidArgument, "measure is not axis independent");
  require(axis >= 0 && axis < m.dim(), Errc::InvalidArgument, "axis out of range");
  if (m.dim() == 1) return m;
  if (m.kind() == MeasureKind::Gaussian) return Measure::gaussian(Mat::Constant(1, 1, m.covariance()(axis, axis)));
  const auto& pf = *m.data().product;
  // A diagonal map sends factor j to coordinate j.
  return Measure::product({pf.factors[axis]}, Mat::Constant(1, 1, pf.map(axis, axis)));
}

namespace {

// Smallest length over which the density changes appreciably.
double length_scale(const Measure& m) {
  double s = std::sqrt(m.sigma_min2());
  if (m.kind() == MeasureKind::Mixture)
    for (const auto& c : m.data().components) s = std::min(s, std::sqrt(linalg::min_eigenvalue(c.cov)));
  if (m.kind() == MeasureKind::Potential) {
    const double k = linalg::max_eigenvalue(Mat(-m.hess_log_density(Vec::Zero(m.dim()))));
    if (k > 0) s = std::min(s, 1.0 / std::sqrt(k));
  }
  return s;
}

// Per-axis half-widths of the region where ln p is within 46 of its value at the centre.
Vec support_halfwidth(const Measure& m) {
  const int n = m.dim();
  Vec r = Vec::Zero(n);
  if (m.kind() != MeasureKind::Potential) {
    for (const auto& c : m.data().components)
      for (int a = 0; a < n; ++a) r(a) = std::max(r(a), std::abs(c.mean(a)) + 12.0 * std::sqrt(c.cov(a, a)));
    return r;
  }
  const double top = m.log_density(Vec::Zero(n));
  const int dirs = n == 1 ? 2 : 72;
  const double start = 0.5 * std::sqrt(m.sigma_min2());
  for (int k = 0; k < dirs; ++k) {
    Vec u(n);
    if (n == 1)
      u(0) = k == 0 ? 1.0 : -1.0;
    else
      u << std::cos(2 * M_PI * k / dirs), std::sin(2 * M_PI * k / dirs);
    double rad = start;
    for (int i = 0; m.log_density(Vec(rad * u)) > top - 46.0; ++i) {
      rad *= 1.15;
      require(i < 400, Errc::ConvolutionUnavailable, "density does not decay");
    }
    for (int a = 0; a < n; ++a) r(a) = std::max(r(a), std::abs(rad * u(a)) * 1.05);
  }
  return r;
}

int fft_size(int n) {
  int s = 1;
  while (s < n) s <<= 1;
  return s;
}

// D(Z || G) for Z = sqrt(lambda) X + sqrt(1-lambda) Y in 1D at spacing h.
double conv_kl_1d(const Measure& mx, const Measure& my, double lambda, double h, double rx, double ry) {
  const double a = std::sqrt(lambda), b = std::sqrt(1.0 - lambda);
  const int hx = static_cast<int>(std::ceil(a * rx / h)), hy = static_cast<int>(std::ceil(b * ry / h));
  const int nx = 2 * hx + 1, ny = 2 * hy + 1;
  const int L = fft_size(nx + ny - 1);
  require(L <= (1 << 24), Errc::ConvolutionUnavailable, "convolution grid too large");
  double* in_x = fftw_alloc_real(L);
  double* in_y = fftw_alloc_real(L);
  fftw_complex* fx = fftw_alloc_complex(L / 2 + 1);
  fftw_complex* fy = fftw_alloc_complex(L / 2 + 1);
  std::fill(in_x, in_x + L, 0.0);
  std::fill(in_y, in_y + L, 0.0);
  Vec z(1);
  for (int i = 0; i < nx; ++i) {
    z(0) = (i - hx) * h / a;
    in_x[i] = std::exp(mx.log_density(z)) / a;
  }
  for (int i = 0; i < ny; ++i) {
    z(0) = (i - hy) * h / b;
    in_y[i] = std::exp(my.log_density(z)) / b;
  }
  fftw_plan px = fftw_plan_dft_r2c_1d(L, in_x, fx, FFTW_ESTIMATE);
  fftw_plan py = fftw_plan_dft_r2c_1d(L, in_y, fy, FFTW_ESTIMATE);
  fftw_execute(px);
  fftw_execute(py);
  for (int k = 0; k < L / 2 + 1; ++k) {
    const double re = fx[k][0] * fy[k][0] - fx[k][1] * fy[k][1];
    const double im = fx[k][0] * fy[k][1] + fx[k][1] * fy[k][0];
    fx[k][0] = re;
    fx[k][1] = im;
  }
  fftw_plan pb = fftw_plan_dft_c2r_1d(L, fx, in_x, FFTW_ESTIMATE);
  fftw_execute(pb);
  double kl = 0;
  const double c0 = 0.5 * std::log(2 * M_PI);
  for (int i = 0; i < nx + ny - 1; ++i) {
    const double p = in_x[i] / L * h;
    if (p <= 1e-300) continue;
    const double zz = (i - hx - hy) * h;
    kl += p * (std::log(p) + 0.5 * zz * zz + c0) * h;
  }
  fftw_destroy_plan(px);
  fftw_destroy_plan(py);
  fftw_destroy_plan(pb);
  fftw_free(in_x);
  fftw_free(in_y);
  fftw_free(fx);
  fftw_free(fy);
  return kl;
}

double conv_kl_2d(const Measure& mx, const Measure& my, double lambda, double h, const Vec& rx, const Vec& ry) {
  const double a = std::sqrt(lambda), b = std::sqrt(1.0 - lambda);
  int hx[2], hy[2], nz[2], L[2];
  for (int k = 0; k < 2; ++k) {
    hx[k] = static_cast<int>(std::ceil(a * rx(k) / h));
    hy[k] = static_cast<int>(std::ceil(b * ry(k) / h));
    nz[k] = 2 * (hx[k] + hy[k]) + 1;
    L[k] = fft_size(nz[k]);
  }
  const long cells = static_cast<long>(L[0]) * L[1];
  require(cells <= (1L << 24), Errc::ConvolutionUnavailable, "2D convolution grid too large");
  const int lc = L[1] / 2 + 1;
  double* in_x = fftw_alloc_real(cells);
  double* in_y = fftw_alloc_real(cells);
  fftw_complex* fx = fftw_alloc_complex(static_cast<long>(L[0]) * lc);
  fftw_complex* fy = fftw_alloc_complex(static_cast<long>(L[0]) * lc);
  std::fill(in_x, in_x + cells, 0.0);
  std::fill(in_y, in_y + cells, 0.0);
  Vec z(2);
  for (int i = 0; i <= 2 * hx[0]; ++i)
    for (int j = 0; j <= 2 * hx[1]; ++j) {
      z << (i - hx[0]) * h / a, (j - hx[1]) * h / a;
      in_x[static_cast<long>(i) * L[1] + j] = std::exp(mx.log_density(z)) / (a * a);
    }
  for (int i = 0; i <= 2 * hy[0]; ++i)
    for (int j = 0; j <= 2 * hy[1]; ++j) {
      z << (i - hy[0]) * h / b, (j - hy[1]) * h / b;
      in_y[static_cast<long>(i) * L[1] + j] = std::exp(my.log_density(z)) / (b * b);
    }
  fftw_plan px = fftw_plan_dft_r2c_2d(L[0], L[1], in_x, fx, FFTW_ESTIMATE);
  fftw_plan py = fftw_plan_dft_r2c_2d(L[0], L[1], in_y, fy, FFTW_ESTIMATE);
  fftw_execute(px);
  fftw_execute(py);
  for (long k = 0; k < static_cast<long>(L[0]) * lc; ++k) {
    const double re = fx[k][0] * fy[k][0] - fx[k][1] * fy[k][1];
    const double im = fx[k][0] * fy[k][1] + fx[k][1] * fy[k][0];
    fx[k][0] = re;
    fx[k][1] = im;
  }
  fftw_plan pb = fftw_plan_dft_c2r_2d(L[0], L[1], fx, in_x, FFTW_ESTIMATE);
  fftw_execute(pb);
  double kl = 0;
  const double c0 = std::log(2 * M_PI);
  const double cell = h * h;
  for (int i = 0; i < nz[0]; ++i)
    for (int j = 0; j < nz[1]; ++j) {
      const double p = in_x[static_cast<long>(i) * L[1] + j] / double(cells) * cell;
      if (p <= 1e-300) continue;
      const double z0 = (i - hx[0] - hy[0]) * h, z1 = (j - hx[1] - hy[1]) * h;
      kl += p * (std::log(p) + 0.5 * (z0 * z0 + z1 * z1) + c0) * cell;
    }
  fftw_destroy_plan(px);
  fftw_destroy_plan(py);
  fftw_destroy_plan(pb);
  fftw_free(in_x);
  fftw_free(in_y);
  fftw_free(fx);
  fftw_free(fy);
  return kl;
}

EntropyEstimate fft_estimate(const Measure& mx, const Measure& my, double lambda) {
  const double a = std::sqrt(lambda), b = std::sqrt(1.0 - lambda);
  const double scale = std::min(a * length_scale(mx), b * length_scale(my));
  const Vec rx = support_halfwidth(mx), ry = support_halfwidth(my);
  const bool one = mx.dim() == 1;
  const double h = scale / (one ? 16.0 : 8.0);
  auto run = [&](double step) {
    return one ? conv_kl_1d(mx, my, lambda, step, rx(0), ry(0)) : conv_kl_2d(mx, my, lambda, step, rx, ry);
  };
  const double fine = run(h);
  const double coarse = run(2 * h);
  EntropyEstimate e;
  e.route = EntropyRoute::DirectQuadrature;
  e.value = std::max(0.0, fine);
  e.stderr_ = std::abs(fine - coarse) + 1e-12;
  return e;
}

}  // namespace

EntropyEstimate convolution_entropy(const Measure& mx, const Measure& my, double lambda) {
  require(lambda > 0.0 && lambda < 1.0, Errc::InvalidArgument, "lambda must lie in (0, 1)");
  require(mx.dim() == my.dim(), Errc::InvalidArgument, "measures have different dimensions");
  if (auto z = convolve_closed_form(mx, my, lambda)) return relative_entropy_direct(*z);
  if (mx.dim() == 1) return fft_estimate(mx, my, lambda);
  if (mx.axis_independent() && my.axis_independent()) {
    EntropyEstimate sum;
    sum.route = EntropyRoute::DirectQuadrature;
    for (int a = 0; a < mx.dim(); ++a) {
      const auto ea = convolution_entropy(axis_marginal(mx, a), axis_marginal(my, a), lambda);
      sum.value += ea.value;
      sum.stderr_ += ea.stderr_;
    }
    return sum;
  }
  if (mx.dim() == 2) return fft_estimate(mx, my, lambda);
  fail(Errc::ConvolutionUnavailable, "no convolution route for dim " + std::to_string(mx.dim()) + " potentials");
}

// ---------------------------------------------------------------- deficit

void DeficitReport::attach(BoundResult b) {
  b.margin = deficit - b.rhs;
  bounds.push_back(std::move(b));
}

namespace {

EntropyEstimate mc_entropy(const Measure& m, const DeficitConfig& cfg, std::uint64_t salt, Provenance& prov) {
  const std::uint64_t seed = splitmix64(cfg.seed, salt);
  auto e = simulate_bridge(m, cfg.grid, cfg.n_paths, seed);
  prov.seeds.push_back(seed);
  prov.grids.push_back(cfg.grid.key());
  return relative_entropy_drift(m, e);
}

}  // namespace

DeficitReport deficit_from(const Measure& mx, const Measure& my, double lambda, const EntropyEstimate& dx,
                           const EntropyEstimate& dy, const DeficitConfig& cfg) {
  require(lambda > 0.0 && lambda < 1.0, Errc::InvalidArgument, "lambda must lie in (0, 1)");
  require(mx.dim() == my.dim(), Errc::InvalidArgument, "measures have different dimensions");
  DeficitReport r;
  r.lambda = lambda;
  r.dX = dx;
  r.dY = dy;
  r.provenance.fingerprints = {mx.fingerprint(), my.fingerprint()};
  auto z = convolve_closed_form(mx, my, lambda);
  if (cfg.route == DeficitRoute::MonteCarlo && z) {
    r.dConv = mc_entropy(*z, cfg, 3, r.provenance);
    r.provenance.fingerprints.push_back(z->fingerprint());
  } else {
    r.dConv = convolution_entropy(mx, my, lambda);
  }
  r.deficit = lambda * r.dX.value + (1.0 - lambda) * r.dY.value - r.dConv.value;
  return r;
}

DeficitReport deficit(const Measure& mx, const Measure& my, double lambda, const DeficitConfig& cfg) {
  if (cfg.route == DeficitRoute::MonteCarlo) {
    Provenance prov;
    const auto dx = mc_entropy(mx, cfg, 1, prov);
    const auto dy = mc_entropy(my, cfg, 2, prov);
    auto r = deficit_from(mx, my, lambda, dx, dy, cfg);
    prov.seeds.insert(prov.seeds.end(), r.provenance.seeds.begin(), r.provenance.seeds.end());
    prov.grids.insert(prov.grids.end(), r.provenance.grids.begin(), r.provenance.grids.end());
    prov.fingerprints = r.provenance.fingerprints;
    r.provenance = prov;
    return r;
  }
  return deficit_from(mx, my, lambda, relative_entropy_direct(mx), relative_entropy_direct(my), cfg);
}

}  // namespace follmer
