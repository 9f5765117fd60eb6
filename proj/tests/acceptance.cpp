// One PASS/FAIL line per acceptance criterion; exit status 1 if any line fails.
#include "follmer/bounds.hpp"
#include "follmer/diagnostics.hpp"
#include "follmer/harness.hpp"
#include "follmer/parallel.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>

using namespace follmer;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void line(int id, bool pass, const std::string& detail) {
  std::printf("C%d %s  %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

const char* const kScenarios[] = {"gaussian-pair",        "identical-standard-gaussian", "gaussian-2d-pair",
                                  "quartic-uniform-pair", "whitened-anisotropic",        "near-gaussian-isotropic",
                                  "quartic-vs-gaussian",  "mixture-demo"};

Scenario bundled(const std::string& name) { return load_scenario(std::string(FOLLMER_SCENARIO_DIR) + "/" + name + ".json"); }

// Largest disagreement between numeric leaves of two reports with equal structure.
double max_leaf_gap(const Json& a, const Json& b, bool& same_shape) {
  if (a.type() != b.type() && !(a.is_number() && b.is_number())) {
    same_shape = false;
    return 0;
  }
  if (a.is_number()) {
    const double x = a.get<double>(), y = b.get<double>();
    if (std::isnan(x) && std::isnan(y)) return 0;
    return std::abs(x - y) / std::max(1.0, std::abs(x));
  }
  double gap = 0;
  if (a.is_array() || a.is_object()) {
    if (a.size() != b.size()) {
      same_shape = false;
      return 0;
    }
    auto ia = a.begin();
    auto ib = b.begin();
    for (; ia != a.end(); ++ia, ++ib) gap = std::max(gap, max_leaf_gap(*ia, *ib, same_shape));
  } else if (a != b) {
    same_shape = false;
  }
  return gap;
}

void c1() {
  const auto t0 = Clock::now();
  const double exact = 0.5 * (2.0 - 1.0 - std::log(2.0));
  const Measure m = Measure::gaussian(Mat::Constant(1, 1, 2.0));
  const auto e = simulate_bridge(m, TimeGrid::geometric(200, 1e-4), 100000, 20260101);
  const auto c = moment_curve(e);
  const auto dr = relative_entropy_drift(m, c), ga = relative_entropy_gamma(m, c);
  const double tol_d = std::max(2 * dr.stderr_, 1e-3), tol_g = std::max(2 * ga.stderr_, 1e-3);
  const double secs = seconds_since(t0);
  const bool ok = std::abs(dr.value - exact) <= tol_d && std::abs(ga.value - exact) <= tol_g && secs < 120;
  line(1, ok,
       fmt("N(0,2): exact %.6f, drift %.6f (tol %.2g), gamma %.6f (tol %.2g), 1e5 paths x 200 nodes in %.1fs", exact,
           dr.value, tol_d, ga.value, tol_g, secs));
}

void c2() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n01;
  std::uniform_real_distribution<double> u01(0.01, 0.99);
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    const int d = 1 + i % 8;
    auto spd = [&]() {
      Eigen::MatrixXd g(d, d);
      for (int r = 0; r < d; ++r)
        for (int c = 0; c < d; ++c) g(r, c) = n01(rng);
      return Eigen::MatrixXd(g * g.transpose() / d + 0.05 * Eigen::MatrixXd::Identity(d, d));
    };
    const Eigen::MatrixXd a = spd(), b = spd();
    const auto gap = matrix_gap(a, b, u01(rng));
    worst = std::max(worst, std::abs(gap.lhs - gap.rhs) / std::max(std::abs(gap.lhs), 1e-300));
  }
  line(2, worst <= 1e-10, fmt("trace identity on 1000 random SPD pairs, dims 1-8: worst relative gap %.3g in %.2fs", worst,
                               seconds_since(t0)));
}

void c3() {
  const auto t0 = Clock::now();
  double worst_cf = 0, worst_ratio = 0;
  bool ok = true;
  for (int d : {1, 2})
    for (double s2 : {0.5, 1.0, 2.0}) {
      const Measure m = Measure::gaussian(Mat(s2 * Mat::Identity(d, d)));
      const auto cf = deficit(m, m, 0.5);
      DeficitConfig mc;
      mc.route = DeficitRoute::MonteCarlo;
      mc.grid = TimeGrid::geometric(120, 1e-4);
      mc.n_paths = 10000;
      mc.seed = 31 + d;
      const auto r = deficit(m, m, 0.5, mc);
      worst_cf = std::max(worst_cf, std::abs(cf.deficit));
      worst_ratio = std::max(worst_ratio, std::abs(r.deficit) / r.budget());
      ok = ok && std::abs(cf.deficit) <= 1e-8 && std::abs(r.deficit) <= r.budget();
    }
  line(3, ok, fmt("X = Y = N(0, s2 I): closed-form |deficit| <= %.3g; Monte Carlo |deficit| / budget <= %.3f (%.1fs)",
                  worst_cf, worst_ratio, seconds_since(t0)));
}

std::map<std::string, Json> c4(const fs::path& work) {
  const auto t0 = Clock::now();
  std::map<std::string, Json> reports;
  bool ok = true;
  std::string notes;
  int applicable = 0;
  for (const char* name : kScenarios) {
    RunOptions o;
    o.out = (work / name).string();
    o.use_cache = false;
    const auto r = run_scenario(bundled(name), o);
    reports[name] = r.report;
    for (const auto& d : r.report.at("deficits")) {
      if (!d.at("nonnegative").get<bool>()) {
        ok = false;
        notes += fmt(" %s: negative deficit at lambda %.2f;", name, d.at("lambda").get<double>());
      }
      for (const auto& b : d.at("bounds")) {
        if (!b.at("applicable").get<bool>() || b.at("display_only").get<bool>()) continue;
        ++applicable;
        if (!b.at("certified").get<bool>()) {
          ok = false;
          notes += fmt(" %s/%s not certified at lambda %.2f;", name, b.at("name").get<std::string>().c_str(),
                       d.at("lambda").get<double>());
        }
      }
    }
  }
  const auto& gp = reports["gaussian-pair"];
  double half = NAN;
  std::string margins;
  for (const auto& d : gp.at("deficits")) {
    if (std::abs(d.at("lambda").get<double>() - 0.5) > 1e-12) continue;
    half = d.at("deficit").get<double>();
    for (const auto& b : d.at("bounds")) {
      const auto n = b.at("name").get<std::string>();
      if (n != "lemma-jump" && n != "jump-ct" && n != "thm3" && n != "thm5") continue;
      if (!b.at("applicable").get<bool>()) {
        if (n != "thm5") ok = false;
        margins += " " + n + " n/a";
        continue;
      }
      const double mg = b.at("margin").get<double>();
      margins += fmt(" %s %.4g", n.c_str(), mg);
      ok = ok && mg > 0;
    }
  }
  ok = ok && std::abs(half - 0.11157177565710488) <= 1e-4;
  line(4, ok,
       fmt("%zu scenarios, %d applicable bound rows all certified=%s; gaussian-pair lambda=1/2 deficit %.8f, margins:%s (%.1fs)%s",
           std::size(kScenarios), applicable, ok ? "yes" : "no", half, margins.c_str(), seconds_since(t0), notes.c_str()));
  return reports;
}

void c5() {
  const auto t0 = Clock::now();
  const Measure m = Measure::product({Family1D::quartic(1.0, 0.5)}, Mat::Identity(1, 1));
  const auto e = simulate_bridge(m, TimeGrid::geometric(120, 1e-4), 100000, 55);
  const auto c = moment_curve(e);
  const auto rows = run_checks(m, e, c, relative_entropy_direct(m));
  bool ok = true;
  std::string detail;
  for (const auto& r : rows) {
    if (r.name != "idvtgamma" && r.name != "gamma-ode") continue;
    ok = ok && r.applicable && r.passed;
    detail += fmt(" %s %s (stat %.3g <= thr %.3g)", r.name.c_str(), r.passed ? "pass" : "FAIL", r.statistic, r.threshold);
  }
  line(5, ok, fmt("quartic(1,0.5), 1e5 paths x 120 nodes:%s (%.1fs)", detail.c_str(), seconds_since(t0)));
}

void c6(const std::map<std::string, Json>& reports) {
  static const std::set<std::string> eig = {"gamma-positive", "gamma-upper-log-concave", "gamma-upper-uniform",
                                            "gamma-lower-uniform", "gamma-lower-poincare"};
  bool ok = true;
  int evaluated = 0, subjects = 0;
  std::string notes;
  for (const auto& [name, rep] : reports)
    for (const char* who : {"X", "Y"}) {
      if (!rep.at("measures").at(who).at("log_concave").get<bool>()) continue;
      ++subjects;
      for (const auto& c : rep.at("checks")) {
        if (c.at("subject") != who || !eig.count(c.at("name").get<std::string>())) continue;
        if (!c.at("applicable").get<bool>()) continue;
        ++evaluated;
        if (!c.at("passed").get<bool>()) {
          ok = false;
          notes += " " + name + "/" + who + "/" + c.at("name").get<std::string>();
        }
      }
    }
  ok = ok && evaluated > 0;
  line(6, ok, fmt("%d applicable eigenvalue checks over %d log-concave measures, all nodes%s", evaluated, subjects,
                  ok ? " pass" : (" FAIL:" + notes).c_str()));
}

void c7() {
  const double c = std::cos(0.6), s = std::sin(0.6);
  Mat rot(2, 2);
  rot << c, -s, s, c;
  Mat d2 = Mat::Zero(2, 2);
  d2.diagonal() << 2.0, 0.5;
  const std::vector<Mat> covs = {Mat::Constant(1, 1, 2.0), d2, Mat(rot * d2 * rot.transpose())};
  double worst = 0;
  for (std::size_t i = 0; i < covs.size(); ++i) {
    const Measure mx = Measure::gaussian(covs[i]);
    const Measure my = Measure::gaussian(Mat(0.5 * covs[i] + 0.5 * Mat::Identity(covs[i].rows(), covs[i].rows())));
    const auto g = TimeGrid::geometric(200, 1e-4);
    const auto cx = moment_curve(simulate_bridge(mx, g, 1000, 70 + i));
    const auto cy = moment_curve(simulate_bridge(my, g, 1000, 80 + i));
    const auto [sx, sy] = gaussian_surrogates(cx, cy);
    worst = std::max({worst, (sx.cov - mx.covariance()).cwiseAbs().maxCoeff(),
                      (sy.cov - my.covariance()).cwiseAbs().maxCoeff()});
  }
  line(7, worst <= 1e-6, fmt("surrogates of 1D, diagonal 2D and rotated 2D Gaussians on 200 geometric nodes: max entry error %.3g", worst));
}

void c8(const std::map<std::string, Json>& reports) {
  double worst = INFINITY;
  for (int i = 1; i < 100; ++i)
    for (int j = 0; j <= 200; ++j) {
      const double lam = i / 100.0, cp = std::pow(10.0, 2.0 * j / 200.0);  // 1 .. 100
      worst = std::min(worst, thm5_coefficient(lam, cp) - lam * (1 - lam) / cp);
    }
  bool cert = true;
  int rows = 0;
  for (const auto& d : reports.at("quartic-vs-gaussian").at("deficits"))
    for (const auto& b : d.at("bounds"))
      if (b.at("name") == "thm5") {
        ++rows;
        cert = cert && b.at("applicable").get<bool>() && b.at("certified").get<bool>();
      }
  line(8, worst >= -1e-15 && cert && rows == 5,
       fmt("min over 99 x 201 (lambda, Cp) grid of coefficient - l(1-l)/Cp = %.3g; thm5 certified on quartic-vs-gaussian "
           "at %d/5 lambdas",
           worst, cert ? rows : 0));
}

void c9(const fs::path& work) {
  const auto t0 = Clock::now();
  auto s = bundled("quartic-uniform-pair");
  s.paths = 4000;
  RunOptions o;
  o.use_cache = false;
  set_max_threads(1);
  o.out = (work / "repro_a").string();
  const auto a = run_scenario(s, o);
  o.out = (work / "repro_b").string();
  const auto b = run_scenario(s, o);
  const bool bytes = slurp(work / "repro_a" / "report.json") == slurp(work / "repro_b" / "report.json") &&
                     slurp(work / "repro_a" / "summary.csv") == slurp(work / "repro_b" / "summary.csv");
  set_max_threads(8);
  o.out = (work / "repro_c").string();
  const auto c = run_scenario(s, o);
  bool shape = true;
  const double thread_gap = max_leaf_gap(a.report, c.report, shape);
  o.out = (work / "repro_a").string();
  o.use_cache = true;
  const auto fresh = run_scenario(s, o);  // fills the cache
  const auto cached = run_scenario(s, o);
  bool shape2 = true;
  const double cache_gap = max_leaf_gap(fresh.report, cached.report, shape2);
  set_max_threads(0);
  const bool ok = bytes && shape && shape2 && thread_gap <= 1e-12 && cache_gap <= 1e-12;
  line(9, ok,
       fmt("identical seed byte-identical=%s; threads 1 vs 8 max relative leaf gap %.3g; cached vs fresh %.3g (%.1fs)",
           bytes ? "yes" : "no", thread_gap, cache_gap, seconds_since(t0)));
}

template <typename F>
auto guarded(int id, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const std::exception& e) {
    line(id, false, std::string("threw: ") + e.what());
    return decltype(f())();
  }
}

}  // namespace

// Optional arguments select criteria by number; C6 and C8 then still need C4.
int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  const auto want = [&](int id) { return only.empty() || only.count(id) > 0; };
  const fs::path work = fs::temp_directory_path() / "follmer_acceptance";
  fs::remove_all(work);
  fs::create_directories(work);
  if (want(1)) guarded(1, c1);
  if (want(2)) guarded(2, c2);
  if (want(3)) guarded(3, c3);
  std::map<std::string, Json> reports;
  if (want(4) || want(6) || want(8)) reports = guarded(4, [&] { return c4(work); });
  if (want(5)) guarded(5, c5);
  if (want(6)) {
    if (reports.size() == std::size(kScenarios))
      guarded(6, [&] { c6(reports); });
    else
      line(6, false, "needs the scenario reports from C4");
  }
  if (want(7)) guarded(7, c7);
  if (want(8)) {
    if (reports.count("quartic-vs-gaussian"))
      guarded(8, [&] { c8(reports); });
    else
      line(8, false, "needs the quartic-vs-gaussian report from C4");
  }
  if (want(9)) guarded(9, [&] { c9(work); });
  fs::remove_all(work);
  std::printf("%s: %d criteria failed\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
