#pragma once

#include "follmer/measures.hpp"
#include "follmer/posterior.hpp"

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace follmer {

enum class GridScheme { Uniform, Geometric };
std::string_view grid_scheme_name(GridScheme s);

/// IntegrateIn::S integrates g(t) ds = g(t) dt/(1-t); IntegrateIn::T integrates g(t) dt.
enum class IntegrateIn { S, T };

struct GridIntegral {
  double value = 0;
  double residual = 0;  // |Q_h - Q_2h|, the discretization error estimate
};

/// Time nodes on [0, 1-eps]. Quadrature works in s = -ln(1-t), on which the geometric scheme is
/// uniform: composite degree-4 panels with weights exact for the local interpolant times the
/// measure (ds or dt = e^{-s} ds), so uneven spacing is handled too.
class TimeGrid {
 public:
  /// 1 - t_k = rho^k, k = 0..n-1, with rho = eps^(1/(n-1)).
  static TimeGrid geometric(int n, double eps = 1e-4);
  /// Geometric with given ratio; the node count is the smallest reaching 1-eps and rho is
  /// raised slightly (finer spacing) so the last node is exactly 1-eps.
  static TimeGrid geometric_ratio(double rho, double eps = 1e-4);
  static TimeGrid uniform(int n, double eps = 1e-4);

  const std::vector<double>& nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }
  double operator[](std::size_t k) const { return nodes_[k]; }
  double epsilon() const { return eps_; }
  GridScheme scheme() const { return scheme_; }
  double rho() const { return rho_; }
  std::string key() const;
  bool same_as(const TimeGrid& o) const { return nodes_ == o.nodes_; }

  /// Quadrature weights for nodes i0..i1 (inclusive).
  std::vector<double> weights(IntegrateIn kind, std::size_t i0, std::size_t i1) const;
  /// Integral of sampled values over nodes i0..i1 with a step-doubling residual.
  GridIntegral integrate(const std::vector<double>& values, IntegrateIn kind, std::size_t i0, std::size_t i1) const;
  GridIntegral integrate(const std::vector<double>& values, IntegrateIn kind) const {
    return integrate(values, kind, 0, size() - 1);
  }
  /// First node index with t >= t0.
  std::size_t first_at_or_after(double t0) const;

 private:
  std::vector<double> nodes_;
  double eps_ = 1e-4;
  GridScheme scheme_ = GridScheme::Geometric;
  double rho_ = 0;
};

enum class SimMethod { Bridge, Euler };
std::string_view sim_method_name(SimMethod m);

/// Per-node snapshots of (X_t, Gamma_t, v_t) for every path. Node-major storage; Gamma packed
/// as the upper triangle (row-major, i <= j).
struct PathEnsemble {
  TimeGrid grid;
  std::size_t n_paths = 0;
  int dim = 0;
  std::uint64_t seed = 0;
  SimMethod method = SimMethod::Bridge;
  std::string fingerprint;  // of the measure

  std::vector<double> x1, g;  // bridge: endpoint and Gaussian per path
  std::vector<double> xt;     // euler: state per node and path
  std::vector<double> gamma;
  std::vector<double> drift;

  int packed() const { return dim * (dim + 1) / 2; }
  Vec x(std::size_t node, std::size_t path) const;
  Mat gamma_at(std::size_t node, std::size_t path) const;
  Vec drift_at(std::size_t node, std::size_t path) const;
  /// Identifies (measure, grid, paths, seed, method).
  std::string cache_key() const;
};

Mat unpack_sym(const double* p, int dim);
void pack_sym(const Mat& a, double* out);

/// X_t = t X_1 + sqrt(t(1-t)) G with X_1 ~ m, G ~ N(0, I), Gamma and v from the posterior.
PathEnsemble simulate_bridge(const Measure& m, const TimeGrid& grid, std::size_t n_paths, std::uint64_t seed);
/// Euler-Maruyama for dX = v(t, X) dt + dB from X_0 = 0 on the grid.
PathEnsemble simulate_euler(const Measure& m, const TimeGrid& grid, std::size_t n_paths, std::uint64_t seed);

/// Per-node Monte Carlo means with batch-means standard errors (20 contiguous path batches).
/// var_gamma is the matrix E[(Gamma - E Gamma)^2] = E[Gamma^2] - (E Gamma)^2, whose trace is the
/// sum of componentwise variances.
struct MomentCurve {
  static constexpr int kBatches = 20;
  TimeGrid grid;
  int dim = 0;
  std::size_t n_paths = 0;
  std::vector<Mat> e_gamma, e_gamma2, var_gamma, e_vv;
  std::vector<Mat> se_gamma, se_gamma2, se_vv;  // componentwise
  std::vector<Vec> e_v, se_v;
  std::vector<double> e_v2, se_v2;
  std::vector<double> tr_dev2, se_tr_dev2;  // Tr E[(Gamma - I)^2]
  std::vector<double> tr_var, se_tr_var;    // Tr Var(Gamma)
  // Per-path v v^T + Gamma/(1-t); its mean is I/(1-t) + Cov - I.
  std::vector<Mat> e_id, se_id;
  // Per-path Gamma - Gamma^2; its mean over (1-t) is the time derivative of E[Gamma].
  std::vector<Mat> e_ode, se_ode;
  // Batch means [node][batch], so that integrals over t get batch-means errors too.
  std::vector<std::vector<double>> batch_v2, batch_dev2;
  std::vector<std::vector<Mat>> batch_gamma, batch_gamma2, batch_vv;
};

/// Mean and batch-means standard error of sum_k w_k f_k, where f_k is a per-node statistic
/// given per batch by fb(k, b) and overall by f(k).
struct CurveIntegral {
  double value = 0;
  double stderr_ = 0;
};
template <typename FB, typename F>
CurveIntegral weighted_batch_sum(const MomentCurve&, const std::vector<double>& w, std::size_t i0, FB&& fb, F&& f) {
  CurveIntegral r;
  for (std::size_t j = 0; j < w.size(); ++j) r.value += w[j] * f(i0 + j);
  double ss = 0;
  for (int b = 0; b < MomentCurve::kBatches; ++b) {
    double v = 0;
    for (std::size_t j = 0; j < w.size(); ++j) v += w[j] * fb(i0 + j, b);
    ss += (v - r.value) * (v - r.value);
  }
  r.stderr_ = std::sqrt(ss / (MomentCurve::kBatches - 1) / MomentCurve::kBatches);
  return r;
}

MomentCurve moment_curve(const PathEnsemble& e);

/// Columns t, EGamma_ij, VarGamma_ij, Evnorm2, se_EGamma_ij, se_Evnorm2 (i <= j).
void write_curve_csv(const MomentCurve& c, const std::string& path);

/// Columnar binary cache. load returns false when the file does not exist; a file that exists
/// but does not parse or does not match the expected key throws CacheCorrupt.
void save_ensemble(const PathEnsemble& e, const std::string& path);
bool load_ensemble(const std::string& path, const std::string& expected_key, PathEnsemble& out);

}  // namespace follmer
