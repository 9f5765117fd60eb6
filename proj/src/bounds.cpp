#include "follmer/bounds.hpp"

#include "follmer/linalg.hpp"
#include "follmer/parallel.hpp"
#include "follmer/util.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace follmer {

MatrixGap matrix_gap(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double lambda) {
  require(a.rows() == a.cols() && b.rows() == b.cols() && a.rows() == b.rows(), Errc::InvalidArgument,
          "matrix_gap needs square matrices of equal size");
  require(lambda >= 0.0 && lambda <= 1.0, Errc::InvalidArgument, "lambda must lie in [0, 1]");
  require(linalg::is_spd(a) && linalg::is_spd(b), Errc::NotPositiveDefinite, "matrix_gap needs SPD inputs");
  const Eigen::MatrixXd as = linalg::symmetrize(a), bs = linalg::symmetrize(b);
  const Eigen::MatrixXd s = linalg::sqrtm_psd(Eigen::MatrixXd(lambda * as * as + (1 - lambda) * bs * bs));
  const Eigen::MatrixXd c = lambda * as + (1 - lambda) * bs;
  const Eigen::MatrixXd dd = (as - bs) * (as - bs);
  MatrixGap g;
  g.lhs = (s - c).trace();
  g.rhs = lambda * (1 - lambda) * Eigen::MatrixXd((s + c).ldlt().solve(dd)).trace();
  return g;
}

double ct_value(CtRule rule, double t, double xi) {
  if (rule == CtRule::LogConcave) return t > 0 ? 1.0 / t : std::numeric_limits<double>::infinity();
  return 1.0 / ((1.0 - t) * xi + t);
}

namespace {

constexpr int kB = MomentCurve::kBatches;

struct NodeStats {
  std::vector<double> mean;
  std::vector<std::vector<double>> batch;  // [node][batch]
};

struct Integral {
  double value = 0;
  double stderr_ = 0;
  double residual = 0;
};

Integral integrate_stats(const TimeGrid& g, const NodeStats& s, IntegrateIn kind) {
  Integral r;
  const auto q = g.integrate(s.mean, kind);
  r.value = q.value;
  r.residual = q.residual;
  const auto w = g.weights(kind, 0, g.size() - 1);
  double ss = 0;
  for (int b = 0; b < kB; ++b) {
    double v = 0;
    for (std::size_t k = 0; k < w.size(); ++k) v += w[k] * s.batch[k][b];
    ss += (v - r.value) * (v - r.value);
  }
  r.stderr_ = std::sqrt(ss / (kB - 1) / kB);
  return r;
}

void check_pair(const PathEnsemble& ex, const PathEnsemble& ey) {
  require(ex.grid.same_as(ey.grid), Errc::GridMismatch, "ensembles live on different grids");
  require(ex.n_paths == ey.n_paths, Errc::GridMismatch, "ensembles have different path counts");
  require(ex.dim == ey.dim, Errc::InvalidArgument, "ensembles have different dimensions");
  require(ex.n_paths >= static_cast<std::size_t>(kB), Errc::InvalidArgument, "too few paths for batch means");
}

// Per node and batch means of f(k, A, B) over paths paired by index.
template <typename F>
NodeStats paired_stats(const PathEnsemble& ex, const PathEnsemble& ey, F&& f) {
  const std::size_t K = ex.grid.size(), n = ex.n_paths;
  NodeStats s;
  s.mean.assign(K, 0.0);
  s.batch.assign(K, std::vector<double>(kB, 0.0));
  parallel_for(K, [&](std::size_t kb, std::size_t ke) {
    for (std::size_t k = kb; k < ke; ++k) {
      double tot = 0;
      for (int b = 0; b < kB; ++b) {
        const std::size_t i0 = n * b / kB, i1 = n * (b + 1) / kB;
        double sb = 0;
        for (std::size_t i = i0; i < i1; ++i) sb += f(k, ex.gamma_at(k, i), ey.gamma_at(k, i));
        s.batch[k][b] = sb / double(i1 - i0);
        tot += sb;
      }
      s.mean[k] = tot / double(n);
    }
  }, 1);
  return s;
}

// Tr((A - B)^2 M^+) with M = sqrt(l A^2 + (1-l) B^2) + l A + (1-l) B.
double jump_integrand(const Mat& a, const Mat& b, double lambda) {
  if (a.rows() == 1) {
    const double x = a(0, 0), y = b(0, 0);
    const double m = std::sqrt(lambda * x * x + (1 - lambda) * y * y) + lambda * x + (1 - lambda) * y;
    return m > 0 ? (x - y) * (x - y) / m : 0.0;
  }
  const Mat s = linalg::sqrtm_psd(Mat(lambda * a * a + (1 - lambda) * b * b));
  const Mat m = s + lambda * a + (1 - lambda) * b;
  Eigen::SelfAdjointEigenSolver<Mat> es(linalg::symmetrize(m));
  Vec inv = es.eigenvalues();
  const double floor = 1e-12 * std::max(1e-300, inv.maxCoeff());
  for (int i = 0; i < inv.size(); ++i) inv(i) = inv(i) > floor ? 1.0 / inv(i) : 0.0;
  const Mat d = a - b;
  const Mat minv = es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
  return (d * d * minv).trace();
}

BoundResult na(const std::string& name, const std::string& reason) {
  BoundResult r;
  r.name = name;
  r.applicable = false;
  r.reason = reason;
  return r;
}

bool declares_xi(const Measure& m, double xi) { return m.xi() && *m.xi() >= xi - 1e-9; }

bool isotropic(const Measure& m) {
  return (m.covariance() - Mat::Identity(m.dim(), m.dim())).cwiseAbs().maxCoeff() <= 1e-6;
}

double batch_stderr(const std::vector<double>& v, double mean) {
  double ss = 0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / (v.size() - 1) / v.size());
}

}  // namespace

BoundResult jump_bound(const PathEnsemble& ex, const PathEnsemble& ey, double lambda) {
  check_pair(ex, ey);
  require(lambda > 0 && lambda < 1, Errc::InvalidArgument, "lambda must lie in (0, 1)");
  const double c = lambda * (1 - lambda);
  auto s = paired_stats(ex, ey, [&](std::size_t, const Mat& a, const Mat& b) { return c * jump_integrand(a, b, lambda); });
  const auto in = integrate_stats(ex.grid, s, IntegrateIn::S);
  BoundResult r;
  r.name = "lemma-jump";
  r.applicable = true;
  r.rhs = in.value;
  r.stderr_ = in.stderr_;
  r.residual = in.residual;
  // g vanishes linearly at t = 1, so int_{1-eps}^1 g/(1-t) dt is about g_last.
  r.inputs = {{"lambda", lambda}, {"epsilon", ex.grid.epsilon()}, {"nodes", double(ex.grid.size())},
              {"n_paths", double(ex.n_paths)}, {"tail_estimate", s.mean.back()}};
  return r;
}

BoundResult jump_bound_ct(const PathEnsemble& ex, const PathEnsemble& ey, double lambda, CtRule rule, double xi) {
  check_pair(ex, ey);
  require(lambda > 0 && lambda < 1, Errc::InvalidArgument, "lambda must lie in (0, 1)");
  require(rule == CtRule::LogConcave || xi > 0, Errc::InvalidArgument, "uniform rule needs xi > 0");
  const double c = 0.5 * lambda * (1 - lambda);
  std::vector<double> worst(ex.grid.size(), 0.0);
  auto s = paired_stats(ex, ey, [&](std::size_t k, const Mat& a, const Mat& b) {
    const double t = ex.grid[k];
    const double ct = ct_value(rule, t, xi);
    if (std::isfinite(ct)) {
      const double top = std::max(linalg::max_eigenvalue(a), linalg::max_eigenvalue(b));
      worst[k] = std::max(worst[k], top / ct - 1.0);
    }
    const Mat d = a - b;
    return std::isfinite(ct) ? c * (d * d).trace() / ct : 0.0;
  });
  const double viol = *std::max_element(worst.begin(), worst.end());
  require(viol <= 1e-6, Errc::HypothesisViolated,
          "Gamma exceeds c_t I by relative " + fmt17(viol) + " under the declared c_t rule");
  const auto in = integrate_stats(ex.grid, s, IntegrateIn::S);
  BoundResult r;
  r.name = "jump-ct";
  r.applicable = true;
  r.rhs = in.value;
  r.stderr_ = in.stderr_;
  r.residual = in.residual;
  r.inputs = {{"lambda", lambda},
              {"xi", rule == CtRule::Uniform ? xi : 0.0},
              {"uniform_rule", rule == CtRule::Uniform ? 1.0 : 0.0},
              {"max_relative_violation", viol},
              {"tail_estimate", s.mean.back()}};
  return r;
}

Surrogate gaussian_surrogate(const MomentCurve& c) {
  const int d = c.dim;
  const std::size_t K = c.grid.size();
  const double eps = c.grid.epsilon();
  const auto w = c.grid.weights(IntegrateIn::T, 0, K - 1);
  const Mat I = Mat::Identity(d, d);
  Surrogate s;
  s.cov = Mat::Zero(d, d);
  s.batch_cov.assign(kB, Mat::Zero(d, d));
  std::vector<double> entry(K);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      for (std::size_t k = 0; k < K; ++k) entry[k] = (c.e_gamma[k] * c.e_gamma[k])(i, j);
      const auto q = c.grid.integrate(entry, IntegrateIn::T);
      s.cov(i, j) = q.value;
      s.residual = std::max(s.residual, q.residual);
    }
  for (int b = 0; b < kB; ++b)
    for (std::size_t k = 0; k < K; ++k) s.batch_cov[b] += w[k] * c.batch_gamma[k][b] * c.batch_gamma[k][b];
  // Trapezoid over [1-eps, 1]; Gamma_1 = I.
  const Mat last = c.e_gamma.back() * c.e_gamma.back();
  s.cov += 0.5 * eps * (last + I);
  for (int b = 0; b < kB; ++b)
    s.batch_cov[b] += 0.5 * eps * (c.batch_gamma.back()[b] * c.batch_gamma.back()[b] + I);
  s.residual += 0.5 * eps * (last - I).cwiseAbs().maxCoeff();
  s.cov = linalg::symmetrize(s.cov);
  s.se = Mat::Zero(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      std::vector<double> v(kB);
      for (int b = 0; b < kB; ++b) v[b] = s.batch_cov[b](i, j);
      double m = 0;
      for (double x : v) m += x / kB;
      s.se(i, j) = batch_stderr(v, m);
    }
  return s;
}

std::pair<Surrogate, Surrogate> gaussian_surrogates(const MomentCurve& cx, const MomentCurve& cy) {
  require(cx.grid.same_as(cy.grid), Errc::GridMismatch, "curves live on different grids");
  return {gaussian_surrogate(cx), gaussian_surrogate(cy)};
}

namespace {

// Shared by thm1 and cor2: l(1-l)/2 (a DX + b DY + a/2 D(GX||GY) + b/2 D(GY||GX)).
struct SurrogateTerms {
  double dx, dy, dxy, dyx;
};

SurrogateTerms surrogate_terms(const Measure& mx, const Measure& my, const Mat& gx, const Mat& gy) {
  return {relative_entropy_direct(mx, gx).value, relative_entropy_direct(my, gy).value, gaussian_kl(gx, gy),
          gaussian_kl(gy, gx)};
}

BoundResult surrogate_bound(const std::string& name, const Measure& mx, const Measure& my, const Surrogate& sx,
                            const Surrogate& sy, double scale, double wx, double wy, double lambda) {
  const double c = 0.5 * lambda * (1 - lambda);
  auto value = [&](const Mat& gx, const Mat& gy) {
    const Mat ax = linalg::symmetrize(Mat(gx / scale)), ay = linalg::symmetrize(Mat(gy / scale));
    const auto t = surrogate_terms(mx, my, ax, ay);
    return std::make_pair(c * (wx * t.dx + wy * t.dy + 0.5 * wx * t.dxy + 0.5 * wy * t.dyx), t);
  };
  const auto [rhs, terms] = value(sx.cov, sy.cov);
  std::vector<double> per(kB);
  double mean = 0;
  for (int b = 0; b < kB; ++b) {
    per[b] = value(sx.batch_cov[b], sy.batch_cov[b]).first;
    mean += per[b] / kB;
  }
  // Grid residual of the surrogates, pushed through by perturbation.
  const int d = mx.dim();
  const Mat I = Mat::Identity(d, d);
  double res = 0;
  for (double sgn : {-1.0, 1.0}) {
    const Mat px = sx.cov + sgn * sx.residual * I, py = sy.cov + sgn * sy.residual * I;
    if (linalg::is_spd(px) && linalg::is_spd(py)) res = std::max(res, std::abs(value(px, py).first - rhs));
  }
  BoundResult r;
  r.name = name;
  r.applicable = true;
  r.rhs = rhs;
  r.stderr_ = batch_stderr(per, mean);
  r.residual = res;
  r.inputs = {{"lambda", lambda},
              {"weight_x", wx},
              {"weight_y", wy},
              {"D_X_GX", terms.dx},
              {"D_Y_GY", terms.dy},
              {"D_GX_GY", terms.dxy},
              {"D_GY_GX", terms.dyx}};
  for (int i = 0; i < d; ++i) {
    r.inputs["GX_" + std::to_string(i) + std::to_string(i)] = sx.cov(i, i) / scale;
    r.inputs["GY_" + std::to_string(i) + std::to_string(i)] = sy.cov(i, i) / scale;
  }
  return r;
}

}  // namespace

BoundResult thm1_rhs(const Measure& mx, const Measure& my, const MomentCurve& cx, const MomentCurve& cy,
                     double lambda) {
  require(lambda > 0 && lambda < 1, Errc::InvalidArgument, "lambda must lie in (0, 1)");
  require(cx.dim == mx.dim() && cy.dim == my.dim(), Errc::InvalidArgument, "curves do not match measures");
  if (!declares_xi(mx, 1.0) || !declares_xi(my, 1.0)) return na("thm1", "needs 1-uniform log-concavity of both");
  const double sx = linalg::min_eigenvalue(mx.covariance()), sy = linalg::min_eigenvalue(my.covariance());
  require(sx >= 1e-10 && sy >= 1e-10, Errc::InvalidArgument, "minimal covariance eigenvalue below 1e-10");
  const auto [gx, gy] = gaussian_surrogates(cx, cy);
  auto r = surrogate_bound("thm1", mx, my, gx, gy, 1.0, sx * sx, sy * sy, lambda);
  r.inputs["sigma2_x"] = sx;
  r.inputs["sigma2_y"] = sy;
  return r;
}

BoundResult cor2_rhs(const Measure& mx, const Measure& my, const MomentCurve& cx, const MomentCurve& cy,
                     double lambda, double xi) {
  require(lambda > 0 && lambda < 1, Errc::InvalidArgument, "lambda must lie in (0, 1)");
  require(xi > 0, Errc::InvalidArgument, "xi must be positive");
  if (!isotropic(mx) || !isotropic(my)) return na("cor2", "needs isotropic inputs (Cov = I within 1e-6)");
  if (!declares_xi(mx, xi) || !declares_xi(my, xi)) return na("cor2", "needs xi-uniform log-concavity of both");
  const auto [gx, gy] = gaussian_surrogates(cx, cy);
  auto r = surrogate_bound("cor2", mx, my, gx, gy, xi, xi * xi, xi * xi, lambda);
  r.inputs["xi"] = xi;
  return r;
}

BoundResult thm3_rhs(const Measure& mx, const Measure& my, double lambda, const EntropyEstimate& dx,
                     const EntropyEstimate& dy) {
  require(lambda > 0 && lambda < 1, Errc::InvalidArgument, "lambda must lie in (0, 1)");
  const int d = mx.dim();
  if ((mx.covariance() + my.covariance() - 2.0 * Mat::Identity(d, d)).cwiseAbs().maxCoeff() > 1e-6)
    return na("thm3", "needs Cov X + Cov Y = 2I within 1e-6 (whiten the pair first)");
  if (!mx.log_concave() || !my.log_concave()) return na("thm3", "needs log-concave inputs");
  const auto px = poincare_bound(mx), py = poincare_bound(my);
  const double sx = linalg::min_eigenvalue(mx.covariance()), sy = linalg::min_eigenvalue(my.covariance());
  const double cp = std::max(px.value / sx, py.value / sy);
  const double xi = std::min(sx, sy) / (3.0 * (2.0 * cp + 1.0));
  const double coef = 0.5 * xi * xi * xi * lambda * (1 - lambda);
  BoundResult r;
  r.name = "thm3";
  r.applicable = true;
  r.rhs = coef * (dx.value + dy.value);
  r.stderr_ = coef * (dx.stderr_ + dy.stderr_);
  r.residual = coef * (dx.tail_bound + dx.residual + dy.tail_bound + dy.residual);
  const bool certified = px.flag != PoincareFlag::Numerical && py.flag != PoincareFlag::Numerical;
  if (!certified) r.reason = "Poincare constant estimated numerically, not a certified upper bound";
  r.inputs = {{"lambda", lambda}, {"sigma2_x", sx},          {"sigma2_y", sy},       {"Cp_X", px.value},
              {"Cp_Y", py.value}, {"Cp", cp},                {"xi", xi},             {"D_X", dx.value},
              {"D_Y", dy.value},  {"cp_certified", certified ? 1.0 : 0.0}};
  return r;
}

BoundResult thm4_rhs(const Measure& mx, const Measure& my, double lambda, const EntropyEstimate& dx,
                     const EntropyEstimate& dy, double cp) {
  require(lambda > 0 && lambda < 1, Errc::InvalidArgument, "lambda must lie in (0, 1)");
  require(cp > 0, Errc::InvalidArgument, "Poincare constant must be positive");
  if (!isotropic(mx) || !isotropic(my)) return na("thm4", "needs isotropic inputs (Cov = I within 1e-6)");
  if (!mx.log_concave() || !my.log_concave()) return na("thm4", "needs log-concave inputs");
  if (dx.value > 0.25) return na("thm4", "D(X||G) = " + fmt17(dx.value) + " exceeds 1/4");
  if (dy.value > 0.25) return na("thm4", "D(Y||G) = " + fmt17(dy.value) + " exceeds 1/4");
  const auto px = poincare_bound(mx), py = poincare_bound(my);
  if (px.value > cp * (1 + 1e-12) || py.value > cp * (1 + 1e-12))
    return na("thm4", "declared Poincare bound is below a measure's Poincare constant");
  const double coef = lambda * (1 - lambda) / (36.0 * cp);
  BoundResult r;
  r.name = "thm4";
  r.applicable = true;
  r.rhs = coef * (dx.value + dy.value);
  r.stderr_ = coef * (dx.stderr_ + dy.stderr_);
  r.residual = coef * (dx.tail_bound + dx.residual + dy.tail_bound + dy.residual);
  r.inputs = {{"lambda", lambda}, {"Cp", cp}, {"D_X", dx.value}, {"D_Y", dy.value}};
  return r;
}

namespace {

// u - ln(1 + u), by series for small |u|.
double excess(double u) {
  if (std::abs(u) < 1e-3) {
    double s = 0, p = u * u;
    for (int k = 2; k <= 8; ++k, p *= -u) s += p / k;
    return s;
  }
  return u - std::log1p(u);
}

}  // namespace

double thm5_coefficient(double lambda, double cp) {
  require(lambda >= 0 && lambda <= 1, Errc::InvalidArgument, "lambda must lie in [0, 1]");
  require(cp > 0, Errc::InvalidArgument, "Poincare constant must be positive");
  const double c = cp - 1.0;
  if (std::abs(c) < 1e-6) {
    // Ratio -> l^2 (1 - 2 l c / 3 + ...) / (1 - 2 c / 3 + ...).
    const double ratio = lambda * lambda * (1.0 - 2.0 * c * (lambda - 1.0) / 3.0);
    return lambda - ratio;
  }
  return lambda - excess(lambda * c) / excess(c);
}

BoundResult thm5_rhs(const Measure& mx, double lambda, const EntropyEstimate& dx, double cp) {
  require(lambda > 0 && lambda < 1, Errc::InvalidArgument, "lambda must lie in (0, 1)");
  (void)mx;
  const double coef = thm5_coefficient(lambda, cp);
  BoundResult r;
  r.name = "thm5";
  r.applicable = true;
  r.rhs = coef * dx.value;
  r.stderr_ = std::abs(coef) * dx.stderr_;
  r.residual = std::abs(coef) * (dx.tail_bound + dx.residual);
  r.inputs = {{"lambda", lambda}, {"Cp", cp}, {"coefficient", coef}, {"D_X", dx.value},
              {"remark_floor", cp >= 1 ? lambda * (1 - lambda) / cp : 0.0}};
  return r;
}

BoundResult wasserstein_thm_rhs(const Measure& mx, const Measure& my, const MomentCurve& cx, const MomentCurve& cy,
                                double lambda) {
  require(lambda > 0 && lambda < 1, Errc::InvalidArgument, "lambda must lie in (0, 1)");
  require(cx.grid.same_as(cy.grid), Errc::GridMismatch, "curves live on different grids");
  if (!declares_xi(mx, 1.0) || !declares_xi(my, 1.0))
    return na("wasserstein-thm", "needs 1-uniform log-concavity of both");
  const std::size_t K = cx.grid.size();
  NodeStats vx, vy, cross;
  for (auto* s : {&vx, &vy, &cross}) {
    s->mean.assign(K, 0.0);
    s->batch.assign(K, std::vector<double>(kB, 0.0));
  }
  for (std::size_t k = 0; k < K; ++k) {
    vx.mean[k] = cx.tr_var[k];
    vy.mean[k] = cy.tr_var[k];
    const Mat dm = cx.e_gamma[k] - cy.e_gamma[k];
    cross.mean[k] = (dm * dm).trace();
    for (int b = 0; b < kB; ++b) {
      const Mat& gx = cx.batch_gamma[k][b];
      const Mat& gy = cy.batch_gamma[k][b];
      vx.batch[k][b] = (cx.batch_gamma2[k][b] - gx * gx).trace();
      vy.batch[k][b] = (cy.batch_gamma2[k][b] - gy * gy).trace();
      const Mat db = gx - gy;
      cross.batch[k][b] = (db * db).trace();
    }
  }
  const double c = 0.5 * lambda * (1 - lambda);
  const double eps = cx.grid.epsilon();
  const auto ix = integrate_stats(cx.grid, vx, IntegrateIn::T);
  const auto iy = integrate_stats(cx.grid, vy, IntegrateIn::T);
  const auto ic = integrate_stats(cx.grid, cross, IntegrateIn::T);
  BoundResult r;
  r.name = "wasserstein-thm";
  r.applicable = true;
  r.rhs = c * (ix.value + iy.value + ic.value);
  r.stderr_ = c * std::sqrt(ix.stderr_ * ix.stderr_ + iy.stderr_ * iy.stderr_ + ic.stderr_ * ic.stderr_);
  r.residual = c * (ix.residual + iy.residual + ic.residual +
                    0.5 * eps * (vx.mean.back() + vy.mean.back() + cross.mean.back()));
  r.inputs = {{"lambda", lambda}, {"W2sq_X_GX_upper", ix.value}, {"W2sq_Y_GY_upper", iy.value},
              {"W2sq_GX_GY_upper", ic.value}};
  return r;
}

BoundResult entropy_jump_display(const Measure& mx, const EntropyEstimate& dx) {
  BoundResult r;
  r.name = "entropy-jump-display";
  r.display_only = true;
  if (!mx.log_concave()) {
    r.reason = "needs a log-concave input";
    return r;
  }
  const auto p = poincare_bound(mx);
  r.applicable = true;
  r.rhs = dx.value / (8.0 * p.value);
  r.reason = "prior result, shown for comparison only";
  r.inputs = {{"Cp", p.value}, {"D_X", dx.value}};
  return r;
}

}  // namespace follmer
