#include "follmer/posterior.hpp"

#include "follmer/linalg.hpp"
#include "follmer/quadrature.hpp"

#include <algorithm>
#include <cmath>

namespace follmer {

namespace {

void check_time(double t) {
  require(t >= 0.0 && t < 1.0, Errc::TimeOutOfRange, "posterior time must lie in [0, 1)");
}

}  // namespace

PosteriorEngine::PosteriorEngine(Measure m) : m_(std::move(m)) {
  const auto& d = m_.data();
  if (m_.kind() != MeasureKind::Potential) {
    route_ = Route::Mixture;
    for (std::size_t k = 0; k < d.components.size(); ++k) {
      Eigen::SelfAdjointEigenSolver<Mat> es(d.components[k].cov);
      comps_.push_back({es.eigenvectors(), es.eigenvalues(), es.eigenvectors().transpose() * d.components[k].mean,
                        std::log(d.weights[k])});
    }
  } else if (d.product && d.product->orthogonal_columns) {
    route_ = Route::Separable;
  } else {
    require(m_.dim() <= 2, Errc::InvalidArgument, "posterior quadrature for non-separable potentials needs dim <= 2");
    route_ = Route::Generic;
  }
}

PosteriorStats PosteriorEngine::operator()(double t, const Vec& x) const {
  check_time(t);
  require(x.size() == m_.dim(), Errc::InvalidArgument, "state has wrong dimension");
  switch (route_) {
    case Route::Mixture: return mixture(t, x);
    case Route::Separable: return separable(t, x);
    case Route::Generic: return generic(t, x);
  }
  return {};
}

PosteriorStats PosteriorEngine::mixture(double t, const Vec& x) const {
  const int n = m_.dim();
  const double s = 1.0 - t;
  const std::size_t K = comps_.size();
  // Per component: Gamma_k = ((1-t) S^-1 + t I)^-1 and drift u_k = Gamma_k (S^-1 (mu - x) + x),
  // both diagonal in the component eigenbasis.
  std::vector<double> lw(K);
  std::vector<Vec> u(K);
  std::vector<Mat> g(K);
  double mx = -INFINITY;
  for (std::size_t k = 0; k < K; ++k) {
    const auto& c = comps_[k];
    const Vec w = c.basis.transpose() * x;
    Vec gam(n), uk(n);
    double lm = 0.0;
    for (int j = 0; j < n; ++j) {
      const double sj = c.eig(j);
      const double den = s + t * sj;  // (1-t)(1 + c s_j) with c = t/(1-t)
      gam(j) = sj / den;
      uk(j) = gam(j) * ((c.mean_eb(j) - w(j)) / sj + w(j));
      // ln of the integral of N(y; m, s_j) exp(a y - c y^2/2) with a = w/(1-t):
      // -ln(1+c s_j)/2 + (2 a m + a^2 s_j - c m^2) / (2 (1 + c s_j)).
      const double mj = c.mean_eb(j);
      lm += -0.5 * std::log(den / s) + (2.0 * w(j) * mj + w(j) * w(j) * sj / s - t * mj * mj) / (2.0 * den);
    }
    u[k] = c.basis * uk;
    g[k] = c.basis * gam.asDiagonal() * c.basis.transpose();
    lw[k] = c.log_weight + lm;
    mx = std::max(mx, lw[k]);
  }
  double tot = 0.0;
  for (double v : lw) tot += std::exp(v - mx);
  PosteriorStats p;
  p.t = t;
  p.x = x;
  p.log_mass = mx + std::log(tot);
  p.drift = Vec::Zero(n);
  p.gamma = Mat::Zero(n, n);
  auto& pi = p.weights;
  pi.resize(K);
  for (std::size_t k = 0; k < K; ++k) {
    pi[k] = std::exp(lw[k] - p.log_mass);
    p.drift += pi[k] * u[k];
  }
  for (std::size_t k = 0; k < K; ++k) {
    const Vec du = u[k] - p.drift;
    p.gamma += pi[k] * (g[k] + s * du * du.transpose());
  }
  p.gamma = linalg::symmetrize(p.gamma);
  p.mean = x + s * p.drift;
  p.cov = s * p.gamma;
  return p;
}

Posterior1D family_posterior(const Family1D& f, double alpha, double beta) {
  auto L = [&](double q) { return f.logq(q) + alpha * q - 0.5 * beta * q * q; };
  auto G = [&](double q) { return f.dlogq(q) + alpha - beta * q; };
  auto H = [&](double q) { return f.d2logq(q) - beta; };

  // Root of the decreasing score G: bracket, then safeguarded Newton.
  const double k0 = beta - f.d2logq(0.0);
  double q = k0 > 0 ? alpha / k0 : 0.0;
  double a = q, b = q;
  double step = 1.0 / std::sqrt(std::max(k0, 1e-12));
  if (G(q) > 0) {
    for (int i = 0; G(b) > 0; ++i) {
      a = b;
      b += step;
      step *= 2;
      require(i < 200, Errc::QuadratureNoConvergence, "posterior is not normalizable");
    }
  } else {
    for (int i = 0; G(a) < 0; ++i) {
      b = a;
      a -= step;
      step *= 2;
      require(i < 200, Errc::QuadratureNoConvergence, "posterior is not normalizable");
    }
  }
  q = 0.5 * (a + b);
  for (int it = 0; it < 100; ++it) {
    const double g = G(q);
    if (g > 0)
      a = q;
    else
      b = q;
    double next = q - g / H(q);
    if (!(next > a && next < b)) next = 0.5 * (a + b);
    const double dq = std::abs(next - q);
    q = next;
    if (dq <= 1e-14 * (1.0 + std::abs(q)) || b - a <= 1e-14 * (1.0 + std::abs(q))) break;
  }
  const double mode = q;
  const double top = L(mode);
  const double sig = 1.0 / std::sqrt(std::max(-H(mode), 1e-300));
  auto reach = [&](double dir) {
    double k = 3.0;
    for (int i = 0; L(mode + dir * k * sig) > top - 32.0; ++i) {
      k *= 1.25;
      require(i < 400, Errc::QuadratureNoConvergence, "posterior does not decay");
    }
    return k;
  };
  const double zlo = -reach(-1.0), zhi = reach(1.0);

  // Initial spacing resolves the sharpest curvature where the integrand carries mass; the
  // built-in factors are symmetric, so their curvature extremes sit at 0 or at the edges.
  double kmax = -H(mode);
  auto probe = [&](double q) {
    if (L(q) > top - 15.0) kmax = std::max(kmax, -H(q));
  };
  for (int i = 0; i <= 16; ++i) probe(mode + sig * (zlo + (zhi - zlo) * i / 16.0));
  if (mode + sig * zlo < 0.0 && 0.0 < mode + sig * zhi) probe(0.0);
  const double hz = std::min(1.0, 2.0 / (sig * std::sqrt(kmax)));
  const int cells = std::min(4096, std::max(16, static_cast<int>(std::ceil((zhi - zlo) / hz))));
  int n = 16 * ((cells + 15) / 16) + 1;
  std::vector<double> vals(n);
  auto z_at = [&](int i, int count) { return zlo + (zhi - zlo) * i / (count - 1); };
  auto w_at = [&](double z) { return std::exp(L(mode + sig * z) - top); };
  for (int i = 0; i < n; ++i) vals[i] = w_at(z_at(i, n));
  auto moments = [&](int count, double& m0, double& m1, double& m2) {
    m0 = m1 = m2 = 0.0;
    for (int i = 0; i < count; ++i) {
      const double w = (i == 0 || i == count - 1) ? 0.5 * vals[i] : vals[i];
      const double z = z_at(i, count);
      m0 += w;
      m1 += w * z;
      m2 += w * z * z;
    }
  };
  double p0, p1, p2;
  moments(n, p0, p1, p2);
  double pm = p1 / p0, pv = p2 / p0 - pm * pm;
  for (int level = 0; level < 4; ++level) {
    const int m = 2 * n - 1;
    std::vector<double> next(m);
    for (int i = 0; i < n; ++i) next[2 * i] = vals[i];
    for (int i = 1; i < m; i += 2) next[i] = w_at(z_at(i, m));
    vals.swap(next);
    n = m;
    double c0, c1, c2;
    moments(n, c0, c1, c2);
    const double cm = c1 / c0, cv = c2 / c0 - cm * cm;
    const double dmass = std::abs(c0 / (2.0 * p0) - 1.0);  // spacing halves, so raw sums double
    if (dmass <= 1e-8 && std::abs(cm - pm) <= 1e-8 * std::max(1.0, std::sqrt(cv)) && std::abs(cv - pv) <= 1e-8 * cv) {
      const double hz = (zhi - zlo) / (n - 1);
      return {std::log(c0 * hz * sig) + top - f.log_normalizer(), mode + sig * cm, sig * sig * cv};
    }
    p0 = c0;
    pm = cm;
    pv = cv;
  }
  fail(Errc::QuadratureNoConvergence, "1D posterior moments did not converge after 4 doublings");
}

PosteriorStats PosteriorEngine::separable(double t, const Vec& x) const {
  const auto& pf = *m_.data().product;
  const int n = m_.dim();
  const double s = 1.0 - t;
  const Vec z = pf.rotation.transpose() * (x - t * pf.shift);
  Vec qm(n), qv(n);
  double lm = x.dot(pf.shift) / s - t * pf.shift.squaredNorm() / (2.0 * s);
  for (int i = 0; i < n; ++i) {
    const double di = pf.scales(i);
    auto r = family_posterior(*pf.factors[i], di * z(i) / s, t * di * di / s);
    qm(i) = r.mean;
    qv(i) = r.var;
    lm += r.log_mass;
  }
  PosteriorStats p;
  p.t = t;
  p.x = x;
  p.log_mass = lm;
  p.mean = pf.rotation * pf.scales.cwiseProduct(qm) + pf.shift;
  p.cov = linalg::symmetrize(Mat(pf.rotation * pf.scales.cwiseAbs2().cwiseProduct(qv).asDiagonal() *
                                 pf.rotation.transpose()));
  p.gamma = p.cov / s;
  p.drift = (p.mean - x) / s;
  return p;
}

PosteriorStats PosteriorEngine::generic(double t, const Vec& x) const {
  const auto& d = m_.data();
  const int n = m_.dim();
  const double s = 1.0 - t;
  const double c = t / s;
  auto logf = [&](const Vec& y) { return d.logp(y) + x.dot(y) / s - 0.5 * c * y.squaredNorm(); };
  auto grad = [&](const Vec& y) { return Vec(d.grad(y) + x / s - c * y); };
  auto hess = [&](const Vec& y) { return Mat(d.hess(y) - c * Mat::Identity(n, n)); };
  auto mode = quad::find_mode(logf, grad, hess, x);
  const Mat frame = quad::local_frame(mode.neg_hessian);
  const auto box = quad::find_window(logf, mode.mode, frame, 40.0);
  const auto r = quad::trapezoid_moments(logf, box, 1e-8, 17, 4);
  PosteriorStats p;
  p.t = t;
  p.x = x;
  p.log_mass = r.log_mass - *d.log_normalizer;
  p.mean = r.mean;
  p.cov = linalg::symmetrize(r.cov);
  p.gamma = p.cov / s;
  p.drift = (p.mean - x) / s;
  return p;
}

PosteriorStats posterior_moments(const Measure& m, double t, const Vec& x) { return PosteriorEngine(m)(t, x); }

// ---------------------------------------------------------------- heat semigroup oracle

namespace {

// ln of the integral of f(y) phi_{1-t}(y - x_j) dy for each x_j, on one shared grid.
std::vector<double> heat_log_multi(const Measure& m, double t, const std::vector<Vec>& xs) {
  check_time(t);
  const int n = m.dim();
  require(n <= 2, Errc::InvalidArgument, "heat semigroup oracle limited to dim <= 2");
  const double s = 1.0 - t;
  const double lf_const = 0.5 * n * std::log(2.0 * M_PI) - 0.5 * n * std::log(2.0 * M_PI * s);
  auto logf = [&](const Vec& y) { return m.log_density(y) + 0.5 * y.squaredNorm(); };
  auto integrand = [&](const Vec& y, const Vec& x, double lf) { return lf - (y - x).squaredNorm() / (2.0 * s); };
  const Vec& x0 = xs.front();

  // Coarse scan locates the region carrying the mass.
  const double sd = std::sqrt(m.sigma_max2());
  const double L = 12.0 * sd + 2.0 * x0.norm() / std::max(t, 0.1) + 2.0;
  const int nc = n == 1 ? 4001 : 301;
  const double hc = 2.0 * L / (nc - 1);
  Vec lo = Vec::Constant(n, INFINITY), hi = Vec::Constant(n, -INFINITY);
  double gmax = -INFINITY;
  std::vector<std::pair<Vec, double>> coarse;
  long total = 1;
  for (int a = 0; a < n; ++a) total *= nc;
  coarse.reserve(total);
  for (long flat = 0; flat < total; ++flat) {
    long rem = flat;
    Vec y(n);
    for (int a = 0; a < n; ++a) {
      y(a) = -L + hc * (rem % nc);
      rem /= nc;
    }
    const double g = integrand(y, x0, logf(y));
    coarse.emplace_back(y, g);
    gmax = std::max(gmax, g);
  }
  for (const auto& [y, g] : coarse)
    if (g > gmax - 50.0)
      for (int a = 0; a < n; ++a) {
        lo(a) = std::min(lo(a), y(a) - 2 * hc);
        hi(a) = std::max(hi(a), y(a) + 2 * hc);
      }

  const double width = t > 0 ? std::sqrt(s / t) : INFINITY;
  const double h = std::min(width, std::sqrt(m.sigma_min2())) / 12.0;
  std::vector<int> counts(n);
  long fine_total = 1;
  for (int a = 0; a < n; ++a) {
    counts[a] = static_cast<int>(std::ceil((hi(a) - lo(a)) / h)) + 1;
    fine_total *= counts[a];
  }
  std::vector<double> best(xs.size(), -INFINITY);
  std::vector<double> lfs(fine_total);
  std::vector<Vec> ys(fine_total);
  for (long flat = 0; flat < fine_total; ++flat) {
    long rem = flat;
    Vec y(n);
    for (int a = 0; a < n; ++a) {
      y(a) = lo(a) + h * (rem % counts[a]);
      rem /= counts[a];
    }
    ys[flat] = y;
    lfs[flat] = logf(y);
  }
  std::vector<double> out(xs.size());
  for (std::size_t j = 0; j < xs.size(); ++j) {
    double mx = -INFINITY;
    for (long f = 0; f < fine_total; ++f) mx = std::max(mx, integrand(ys[f], xs[j], lfs[f]));
    double acc = 0.0;
    for (long f = 0; f < fine_total; ++f) acc += std::exp(integrand(ys[f], xs[j], lfs[f]) - mx);
    out[j] = mx + std::log(acc) + n * std::log(h) + lf_const;
  }
  return out;
}

}  // namespace

double heat_log_semigroup(const Measure& m, double t, const Vec& x) { return heat_log_multi(m, t, {x}).front(); }

Vec heat_loggrad(const Measure& m, double t, const Vec& x) {
  const int n = m.dim();
  const double h = 1e-5 * (1.0 + x.norm());
  std::vector<Vec> xs{x};
  for (int a = 0; a < n; ++a) {
    Vec xp = x, xm = x;
    xp(a) += h;
    xm(a) -= h;
    xs.push_back(xp);
    xs.push_back(xm);
  }
  const auto f = heat_log_multi(m, t, xs);
  Vec g(n);
  for (int a = 0; a < n; ++a) g(a) = (f[1 + 2 * a] - f[2 + 2 * a]) / (2.0 * h);
  return g;
}

}  // namespace follmer
