#pragma once

#include "follmer/measures.hpp"
#include "follmer/report.hpp"
#include "follmer/simulate.hpp"

#include <optional>
#include <string>
#include <vector>

namespace follmer {

enum class EntropyRoute { DirectQuadrature, DriftEnergy, GammaIdentity, GaussianClosedForm };
std::string_view entropy_route_name(EntropyRoute r);

/// Relative entropy in nats with its error terms. budget() = 2 stderr + tail + residual.
struct EntropyEstimate {
  double value = 0;
  EntropyRoute route = EntropyRoute::DirectQuadrature;
  double stderr_ = 0;      // Monte Carlo standard error; quadrature residual on the direct route
  double tail_bound = 0;   // bound on the unintegrated [1-eps, 1] contribution
  double residual = 0;     // grid discretization estimate (Monte Carlo routes)
  bool tail_certified = true;
  double budget() const { return 2.0 * stderr_ + tail_bound + residual; }
};

/// E|grad ln(p / phi)|^2, the Fisher information relative to the standard Gaussian, when it
/// can be computed (closed form, stored factor data, Gauss-Hermite or dim <= 2 quadrature).
std::optional<double> relative_fisher(const Measure& m);

/// D(m || N(0, ref)).
EntropyEstimate relative_entropy_direct(const Measure& m, const Mat& ref);
EntropyEstimate relative_entropy_direct(const Measure& m);

/// 1/2 int E|v_t|^2 dt over the grid; the tail [1-eps, 1] is estimated by eps/2 E|v_last|^2 and
/// bounded using monotonicity of E|v_t|^2 up to its terminal value, the relative Fisher information.
EntropyEstimate relative_entropy_drift(const Measure& m, const MomentCurve& c);
EntropyEstimate relative_entropy_drift(const Measure& m, const PathEnsemble& e);
/// 1/2 int Tr E[(Gamma_t - I)^2] / (1-t) dt over the grid; tail bounded as above.
EntropyEstimate relative_entropy_gamma(const Measure& m, const MomentCurve& c);
EntropyEstimate relative_entropy_gamma(const Measure& m, const PathEnsemble& e);

/// D(N(0, a) || N(0, b)).
double gaussian_kl(const Mat& a, const Mat& b);
/// W_2^2 between N(0, a) and N(0, b).
double gaussian_w2_squared(const Mat& a, const Mat& b);

/// Law of sqrt(lambda) X + sqrt(1-lambda) Y when it is a Gaussian mixture (pairwise components).
std::optional<Measure> convolve_closed_form(const Measure& mx, const Measure& my, double lambda);

/// Law of a single coordinate of an axis-independent measure.
Measure axis_marginal(const Measure& m, int axis);

/// D(sqrt(lambda) X + sqrt(1-lambda) Y || G): closed-form mixture algebra when possible, else FFT
/// convolution on a grid (dim 1, axis-independent pairs per axis, or dim 2 tensor grids).
/// Throws ConvolutionUnavailable otherwise.
EntropyEstimate convolution_entropy(const Measure& mx, const Measure& my, double lambda);

enum class DeficitRoute { Direct, MonteCarlo };

struct DeficitConfig {
  DeficitRoute route = DeficitRoute::Direct;
  // Monte Carlo route: bridge ensembles on this grid.
  TimeGrid grid = TimeGrid::geometric(200, 1e-4);
  std::size_t n_paths = 20000;
  std::uint64_t seed = 1;
};

struct Provenance {
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> grids;
  std::vector<std::string> fingerprints;
};

struct DeficitReport {
  double lambda = 0.5;
  EntropyEstimate dX, dY, dConv;
  double deficit = 0;
  std::vector<BoundResult> bounds;
  Provenance provenance;
  double budget() const { return lambda * dX.budget() + (1.0 - lambda) * dY.budget() + dConv.budget(); }
  /// Attach a bound and fill its margin.
  void attach(BoundResult b);
};

DeficitReport deficit(const Measure& mx, const Measure& my, double lambda, const DeficitConfig& cfg = {});
/// Same, with precomputed single-measure entropies.
DeficitReport deficit_from(const Measure& mx, const Measure& my, double lambda, const EntropyEstimate& dx,
                           const EntropyEstimate& dy, const DeficitConfig& cfg = {});

/// Differential entropy from D(X || G): h = d/2 ln(2 pi) + Tr Cov / 2 - D.
double differential_entropy(const Measure& m, double d_rel);

}  // namespace follmer
