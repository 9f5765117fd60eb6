#include "follmer/quadrature.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <memory>
#include <mutex>

namespace follmer::quad {

const GaussHermiteRule& gauss_hermite(int n) {
  require(n >= 1 && n <= 512, Errc::InvalidArgument, "Gauss-Hermite order out of range");
  static std::mutex mu;
  static std::map<int, std::unique_ptr<GaussHermiteRule>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto& slot = cache[n];
  if (slot) return *slot;

  Eigen::VectorXd diag = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd sub(std::max(n - 1, 0));
  for (int k = 1; k < n; ++k) sub(k - 1) = std::sqrt(0.5 * k);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
  es.computeFromTridiagonal(diag, sub, Eigen::ComputeEigenvectors);

  auto rule = std::make_unique<GaussHermiteRule>();
  rule->nodes.resize(n);
  rule->weights.resize(n);
  const double sqrt_pi = std::sqrt(M_PI);
  for (int i = 0; i < n; ++i) {
    rule->nodes[i] = es.eigenvalues()(i);
    const double v0 = es.eigenvectors()(0, i);
    rule->weights[i] = sqrt_pi * v0 * v0;
  }
  slot = std::move(rule);
  return *slot;
}

double gaussian_expectation(const Vec& mean, const Mat& cov, int n,
                            const std::function<double(const Vec&)>& g) {
  const int d = static_cast<int>(mean.size());
  const auto& rule = gauss_hermite(n);
  Eigen::LLT<Mat> llt(cov);
  require(llt.info() == Eigen::Success, Errc::NotPositiveDefinite, "covariance not SPD");
  const Mat scale = std::sqrt(2.0) * Mat(llt.matrixL());

  long total = 1;
  for (int k = 0; k < d; ++k) total *= n;
  double sum = 0.0;
  Vec z(d);
  for (long flat = 0; flat < total; ++flat) {
    long rem = flat;
    double w = 1.0;
    for (int k = 0; k < d; ++k) {
      const int i = static_cast<int>(rem % n);
      rem /= n;
      z(k) = rule.nodes[i];
      w *= rule.weights[i];
    }
    sum += w * g(mean + scale * z);
  }
  return sum / std::pow(M_PI, 0.5 * d);
}

namespace {

struct GridAccumulator {
  double m0 = 0.0;
  Vec m1;
  Mat m2;
};

GridAccumulator accumulate(const std::vector<double>& vals, const Box& box, int n) {
  const int d = static_cast<int>(box.center.size());
  GridAccumulator acc;
  acc.m1 = Vec::Zero(d);
  acc.m2 = Mat::Zero(d, d);
  long total = static_cast<long>(vals.size());
  Vec z(d);
  for (long flat = 0; flat < total; ++flat) {
    const double f = vals[flat];
    if (f == 0.0) continue;
    long rem = flat;
    double w = f;
    for (int k = 0; k < d; ++k) {
      const int i = static_cast<int>(rem % n);
      rem /= n;
      z(k) = box.lo(k) + (box.hi(k) - box.lo(k)) * i / (n - 1);
      if (i == 0 || i == n - 1) w *= 0.5;
    }
    acc.m0 += w;
    acc.m1 += w * z;
    acc.m2.noalias() += w * z * z.transpose();
  }
  return acc;
}

}  // namespace

MomentResult trapezoid_moments(const std::function<double(const Vec&)>& logf, const Box& box,
                               double tol, int n0, int max_doublings) {
  const int d = static_cast<int>(box.center.size());
  const double log_ref = logf(box.center);
  require(std::isfinite(log_ref), Errc::QuadratureNoConvergence, "log-density not finite at center");

  auto point = [&](const long* idx, int n) {
    Vec z(d);
    for (int k = 0; k < d; ++k) z(k) = box.lo(k) + (box.hi(k) - box.lo(k)) * idx[k] / (n - 1);
    return Vec(box.center + box.frame * z);
  };
  auto eval = [&](const Vec& y) {
    const double lf = logf(y) - log_ref;
    return lf < -700.0 ? 0.0 : std::exp(lf);
  };

  int n = n0;
  long total = 1;
  for (int k = 0; k < d; ++k) total *= n;
  std::vector<double> vals(total);
  long idx[kMaxDim];
  for (long flat = 0; flat < total; ++flat) {
    long rem = flat;
    for (int k = 0; k < d; ++k) {
      idx[k] = rem % n;
      rem /= n;
    }
    vals[flat] = eval(point(idx, n));
  }

  double vol = std::abs(box.frame.determinant());
  auto finish = [&](const GridAccumulator& acc, int count) {
    MomentResult r;
    double cell = vol;
    for (int k = 0; k < d; ++k) cell *= (box.hi(k) - box.lo(k)) / (count - 1);
    r.log_mass = std::log(acc.m0 * cell) + log_ref;
    const Vec mz = acc.m1 / acc.m0;
    const Mat cz = acc.m2 / acc.m0 - mz * mz.transpose();
    r.mean = box.center + box.frame * mz;
    r.cov = box.frame * cz * box.frame.transpose();
    r.nodes_per_axis = count;
    return std::make_pair(r, std::make_pair(mz, cz));
  };

  auto prev_acc = accumulate(vals, box, n);
  require(prev_acc.m0 > 0.0, Errc::QuadratureNoConvergence, "zero mass on quadrature grid");
  auto prev = finish(prev_acc, n);

  for (int level = 0; level < max_doublings; ++level) {
    const int m = 2 * n - 1;
    long mtotal = 1;
    for (int k = 0; k < d; ++k) mtotal *= m;
    std::vector<double> next(mtotal);
    for (long flat = 0; flat < mtotal; ++flat) {
      long rem = flat;
      bool all_even = true;
      long old_flat = 0, stride = 1;
      for (int k = 0; k < d; ++k) {
        idx[k] = rem % m;
        rem /= m;
        if (idx[k] % 2 != 0) all_even = false;
        old_flat += (idx[k] / 2) * stride;
        stride *= n;
      }
      next[flat] = all_even ? vals[old_flat] : eval(point(idx, m));
    }
    vals.swap(next);
    n = m;

    auto acc = accumulate(vals, box, n);
    auto cur = finish(acc, n);
    const double dmass = std::abs(acc.m0 * std::pow(0.5, d) / prev_acc.m0 - 1.0);
    const double dmean = (cur.second.first - prev.second.first).cwiseAbs().maxCoeff();
    const double cscale = std::max(cur.second.second.cwiseAbs().maxCoeff(), 1e-300);
    const double dcov = (cur.second.second - prev.second.second).cwiseAbs().maxCoeff() / cscale;
    if (dmass <= tol && dmean <= tol && dcov <= tol) return cur.first;
    prev_acc = acc;
    prev = cur;
  }
  fail(Errc::QuadratureNoConvergence, "moments did not converge after " + std::to_string(max_doublings) +
                                          " doublings");
}

TensorIntegral tensor_trapezoid(const std::function<double(const Vec&)>& logf,
                                const std::function<void(const Vec&, double, double*)>& g, int k,
                                const Box& box, double tol, int n0, int max_doublings) {
  const int d = static_cast<int>(box.center.size());
  const double log_ref = logf(box.center);
  require(std::isfinite(log_ref), Errc::QuadratureNoConvergence, "log-density not finite at center");
  const double vol = std::abs(box.frame.determinant());

  // Per-node weighted contributions are recomputed at every level; nodes are cached.
  int n = n0;
  std::vector<double> cache;  // k values per node, already multiplied by exp(logf - ref)
  auto coord = [&](long i, int count, int axis) {
    return box.lo(axis) + (box.hi(axis) - box.lo(axis)) * static_cast<double>(i) / (count - 1);
  };
  auto eval_node = [&](const long* idx, int count, double* out) {
    Vec z(d);
    for (int a = 0; a < d; ++a) z(a) = coord(idx[a], count, a);
    const Vec y = box.center + box.frame * z;
    const double lf = logf(y);
    const double w = (std::isfinite(lf) && lf - log_ref > -700.0) ? std::exp(lf - log_ref) : 0.0;
    if (w == 0.0) {
      for (int j = 0; j < k; ++j) out[j] = 0.0;
      return;
    }
    g(y, lf, out);
    for (int j = 0; j < k; ++j) out[j] *= w;
  };
  auto total_of = [&](int count) {
    long t = 1;
    for (int a = 0; a < d; ++a) t *= count;
    return t;
  };
  auto integrate = [&](int count) {
    std::vector<double> s(k, 0.0);
    long idx[kMaxDim];
    const long total = total_of(count);
    for (long flat = 0; flat < total; ++flat) {
      long rem = flat;
      double w = 1.0;
      for (int a = 0; a < d; ++a) {
        idx[a] = rem % count;
        rem /= count;
        if (idx[a] == 0 || idx[a] == count - 1) w *= 0.5;
      }
      const double* v = &cache[flat * k];
      for (int j = 0; j < k; ++j) s[j] += w * v[j];
    }
    double cell = vol;
    for (int a = 0; a < d; ++a) cell *= (box.hi(a) - box.lo(a)) / (count - 1);
    for (auto& v : s) v *= cell;
    return s;
  };

  {
    const long total = total_of(n);
    cache.assign(total * k, 0.0);
    long idx[kMaxDim];
    for (long flat = 0; flat < total; ++flat) {
      long rem = flat;
      for (int a = 0; a < d; ++a) {
        idx[a] = rem % n;
        rem /= n;
      }
      eval_node(idx, n, &cache[flat * k]);
    }
  }
  auto prev = integrate(n);
  for (int level = 0; level < max_doublings; ++level) {
    const int m = 2 * n - 1;
    const long total = total_of(m);
    std::vector<double> next(total * k);
    long idx[kMaxDim];
    for (long flat = 0; flat < total; ++flat) {
      long rem = flat;
      bool all_even = true;
      long old_flat = 0, stride = 1;
      for (int a = 0; a < d; ++a) {
        idx[a] = rem % m;
        rem /= m;
        if (idx[a] % 2 != 0) all_even = false;
        old_flat += (idx[a] / 2) * stride;
        stride *= n;
      }
      if (all_even)
        std::copy_n(&cache[old_flat * k], k, &next[flat * k]);
      else
        eval_node(idx, m, &next[flat * k]);
    }
    cache.swap(next);
    n = m;
    auto cur = integrate(n);
    double scale = 0.0, diff = 0.0;
    for (int j = 0; j < k; ++j) {
      scale = std::max(scale, std::abs(cur[j]));
      diff = std::max(diff, std::abs(cur[j] - prev[j]));
    }
    const double rel = scale > 0 ? diff / scale : 0.0;
    if (rel <= tol) return TensorIntegral{cur, log_ref, rel, n};
    prev = cur;
  }
  fail(Errc::QuadratureNoConvergence, "tensor integral did not converge");
}

Box find_window(const std::function<double(const Vec&)>& logf, const Vec& center, const Mat& frame,
                double drop) {
  const int d = static_cast<int>(center.size());
  const double top = logf(center);
  require(std::isfinite(top), Errc::QuadratureNoConvergence, "log-density not finite at window center");
  Box box{center, frame, Vec(d), Vec(d)};
  for (int k = 0; k < d; ++k) {
    for (int sign : {-1, 1}) {
      double L = 2.0;
      int steps = 0;
      while (true) {
        const Vec y = center + frame.col(k) * (sign * L);
        const double v = logf(y);
        if (!(v > top - drop)) break;  // also stops on NaN / -inf
        L *= 1.5;
        require(++steps < 60, Errc::QuadratureNoConvergence, "log-density does not decay");
      }
      if (sign < 0)
        box.lo(k) = -L;
      else
        box.hi(k) = L;
    }
  }
  return box;
}

ModeResult find_mode(const std::function<double(const Vec&)>& logf,
                     const std::function<Vec(const Vec&)>& grad,
                     const std::function<Mat(const Vec&)>& hess, Vec y, int max_iter) {
  const int d = static_cast<int>(y.size());
  ModeResult out;
  double f = logf(y);
  for (int it = 0; it < max_iter; ++it) {
    out.iterations = it + 1;
    const Vec g = grad(y);
    const Mat h = hess(y);
    Vec step;
    Eigen::LLT<Mat> llt(-h);
    if (llt.info() == Eigen::Success) {
      step = llt.solve(g);
    } else {
      step = g / std::max(1.0, g.norm());
    }
    double alpha = 1.0;
    Vec trial = y + step;
    double ft = logf(trial);
    int back = 0;
    while (!(ft >= f - 1e-14 * (1.0 + std::abs(f))) && back < 40) {
      alpha *= 0.5;
      trial = y + alpha * step;
      ft = logf(trial);
      ++back;
    }
    if (back == 40) break;
    const double move = (alpha * step).norm();
    y = trial;
    f = ft;
    if (move <= 1e-12 * (1.0 + y.norm())) {
      out.converged = true;
      break;
    }
  }
  out.mode = y;
  out.neg_hessian = -hess(y);
  (void)d;
  return out;
}

Mat local_frame(const Mat& neg_hessian) {
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (neg_hessian + neg_hessian.transpose()));
  Vec scale = es.eigenvalues();
  for (Eigen::Index i = 0; i < scale.size(); ++i)
    scale(i) = scale(i) > 1e-300 ? 1.0 / std::sqrt(scale(i)) : 1.0;
  return es.eigenvectors() * scale.asDiagonal();
}

}  // namespace follmer::quad
