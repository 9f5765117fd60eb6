#pragma once

#include <map>
#include <string>
#include <vector>

namespace follmer {

/// One right-hand side of a deficit lower bound. Names are stable identifiers:
/// lemma-jump, jump-ct, thm1, cor2, thm3, thm4, thm5, wasserstein-thm.
struct BoundResult {
  std::string name;
  double rhs = 0;
  bool applicable = false;
  std::string reason;                    // violated hypothesis when not applicable
  std::map<std::string, double> inputs;  // named scalars the value was computed from
  double stderr_ = 0;                    // statistical error of rhs (Monte Carlo routes)
  double residual = 0;                   // discretization and tail error of rhs
  double margin = 0;                     // deficit - rhs, filled when attached to a report
  bool display_only = false;             // reported, never certified
};

}  // namespace follmer
