#pragma once

#include "follmer/diagnostics.hpp"
#include "follmer/entropy.hpp"
#include "follmer/measures.hpp"
#include "follmer/simulate.hpp"

#include "json.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace follmer {

inline constexpr const char* kScenarioSchema = "follmer-lab/scenario/1";
inline constexpr const char* kReportSchema = "follmer-lab/report/1";
inline constexpr const char* kLibraryVersion = "1.0.0";

using Json = nlohmann::ordered_json;

struct GridSpec {
  std::string scheme = "geometric";  // geometric | uniform
  int nodes = 200;
  double epsilon = 1e-4;
  std::optional<double> rho;  // geometric only; overrides nodes
  TimeGrid make() const;
};

/// Every bound name the harness knows, in report order.
const std::vector<std::string>& known_bounds();

struct Scenario {
  std::string name;
  std::string description;
  Json measure_x, measure_y;  // declarations as written
  Measure x = Measure::gaussian(Mat::Identity(1, 1));
  Measure y = Measure::gaussian(Mat::Identity(1, 1));
  std::vector<double> lambdas{0.1, 0.25, 0.5, 0.75, 0.9};
  GridSpec grid;
  std::size_t paths = 20000;
  std::uint64_t seed = 1;
  bool whiten = false;
  std::vector<std::string> bounds = known_bounds();
  bool checks = true;
  std::optional<double> thm4_cp;
};

/// Measure declaration -> Measure. where names the enclosing key for error messages.
Measure parse_measure(const Json& decl, const std::string& where);
/// Throws ConfigInvalid naming the offending key.
Scenario parse_scenario(const std::string& text, const std::string& origin);
Scenario load_scenario(const std::string& path);

struct RunOptions {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> paths;
  std::optional<double> epsilon;
  std::string out;        // output directory; empty writes nothing
  std::string cache_dir;  // empty: <out>/cache when out is set, else no cache
  bool use_cache = true;
};

/// Overrides applied to a copy of the scenario.
Scenario with_overrides(Scenario s, const RunOptions& o);

struct RunResult {
  Json report;
  bool ok = false;  // every applicable bound certified, every gating check passed, deficits nonnegative
  int exit_code() const { return ok ? 0 : 1; }
};

/// whiten -> simulate -> entropies -> deficits -> bounds -> diagnostics. Module errors are rethrown
/// with the scenario name prefixed.
RunResult run_scenario(const Scenario& s, const RunOptions& o);

/// Single-measure entropy by all three routes ("X" or "Y").
Json entropy_only(const Scenario& s, const RunOptions& o, const std::string& which);
/// Simulates both measures and writes curve_X.csv, curve_Y.csv and plot_curves.dat.
Json curves_only(const Scenario& s, const RunOptions& o);
/// Diagnostics ledger only; ok reflects the gating checks.
RunResult checks_only(const Scenario& s, const RunOptions& o);

/// Writes report.json, summary.csv, entropies.csv, checks.csv, checks.txt and plot_deficit.dat.
void write_report_files(const Json& report, const std::string& dir);
/// Human-readable digest of a report.
std::string render_summary(const Json& report);

}  // namespace follmer
