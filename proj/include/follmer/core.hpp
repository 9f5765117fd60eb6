#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <string_view>

namespace follmer {

// Measures live in dimensions 1..3; fixed capacity keeps hot loops off the heap.
inline constexpr int kMaxDim = 3;

using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxDim, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxDim, kMaxDim>;

enum class Errc {
  UnnormalizedDensity,
  SamplerDiagnosticFailure,
  PoincareUnavailable,
  SingularCovariance,
  QuadratureNoConvergence,
  TimeOutOfRange,
  DriftBlowup,
  ConvolutionUnavailable,
  NotPositiveDefinite,
  GridMismatch,
  HypothesisViolated,
  ConfigInvalid,
  InvalidArgument,
  CacheCorrupt,
};

std::string_view errc_name(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, Errc code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace follmer
