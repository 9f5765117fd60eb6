#pragma once

#include "follmer/entropy.hpp"
#include "follmer/measures.hpp"
#include "follmer/simulate.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace follmer {

/// Version tag of the check list below; bump when a check is added, removed or redefined.
inline constexpr const char* kChecksVersion = "follmer-checks/1";

struct CheckContext {
  std::string fingerprint;
  std::string grid;
  std::vector<std::uint64_t> seeds;
};

/// One ledger row. statistic and threshold are reported at the worst node (largest
/// statistic - threshold); passed <=> statistic <= threshold. Inapplicable checks carry
/// statistic = threshold = 0 and the missing hypothesis in detail. Advisory checks are
/// reported but do not gate the harness exit code.
struct CheckResult {
  std::string name;
  double statistic = 0;
  double threshold = 0;
  bool passed = true;
  bool applicable = true;
  bool advisory = false;
  double at_t = 0;  // time of the worst node
  std::string detail;
  CheckContext context;
};

/// Names produced by run_checks and run_pair_checks, sorted.
std::vector<std::string> single_check_names();
std::vector<std::string> pair_check_names();

/// Single-measure suite on a bridge or Euler ensemble of m and its moment curve; d is the
/// reference value of D(m||G) used by the entropy-dependent checks. Thresholds are
/// 3 stderr (batch means of the paired statistic) plus deterministic terms: the entropy
/// budget, grid residuals, finite-difference error and a floor of 1e-8 (1 + scale) for
/// posterior quadrature. Rows are sorted by name.
std::vector<CheckResult> run_checks(const Measure& m, const PathEnsemble& e, const MomentCurve& curve,
                                    const EntropyEstimate& d);

/// Pair suite for a jointly whitened pair (Cov X + Cov Y = 2I) on a common grid.
std::vector<CheckResult> run_pair_checks(const Measure& mx, const Measure& my, const PathEnsemble& ex,
                                         const PathEnsemble& ey, const MomentCurve& cx, const MomentCurve& cy,
                                         const EntropyEstimate& dx, const EntropyEstimate& dy);

/// True when every applicable, non-advisory row passed.
bool all_gating_passed(const std::vector<CheckResult>& rows);

/// Ledger as a JSON array (pretty-printed, stable key order) and as a fixed-width table.
std::string checks_json(const std::vector<CheckResult>& rows);
std::string checks_table(const std::vector<CheckResult>& rows);

}  // namespace follmer
