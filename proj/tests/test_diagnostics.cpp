#include "doctest.h"

#include "follmer/diagnostics.hpp"

#include <algorithm>
#include <cmath>

using namespace follmer;

namespace {

Mat diag(std::initializer_list<double> v) {
  Vec d(static_cast<int>(v.size()));
  int i = 0;
  for (double x : v) d(i++) = x;
  return d.asDiagonal();
}

const CheckResult& row(const std::vector<CheckResult>& rows, const std::string& name) {
  auto it = std::find_if(rows.begin(), rows.end(), [&](const CheckResult& r) { return r.name == name; });
  REQUIRE(it != rows.end());
  return *it;
}

struct Run {
  Measure m;
  PathEnsemble e;
  MomentCurve c;
  EntropyEstimate d;
};

Run run(const Measure& m, int nodes, std::size_t paths, std::uint64_t seed) {
  auto e = simulate_bridge(m, TimeGrid::geometric(nodes, 1e-4), paths, seed);
  auto c = moment_curve(e);
  return {m, std::move(e), std::move(c), relative_entropy_direct(m)};
}

}  // namespace

TEST_SUITE("diagnostics") {
  TEST_CASE("standard Gaussian passes every check at zero") {
    auto r = run(Measure::gaussian(Mat::Identity(2, 2)), 60, 400, 3);
    auto rows = run_checks(r.m, r.e, r.c, r.d);
    CHECK(rows.size() == single_check_names().size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      CAPTURE(rows[i].name);
      CHECK(rows[i].name == single_check_names()[i]);
      CHECK(rows[i].passed == (rows[i].statistic <= rows[i].threshold));
      if (!rows[i].applicable) continue;
      CHECK(rows[i].passed);
      CHECK(rows[i].statistic <= 1e-8);
    }
    CHECK(all_gating_passed(rows));
  }

  TEST_CASE("N(0,2): identity and Gaussian-tight comparisons") {
    auto r = run(Measure::gaussian(diag({2.0})), 120, 20000, 5);
    auto rows = run_checks(r.m, r.e, r.c, r.d);
    CHECK(row(rows, "idvtgamma").passed);
    for (const auto& x : rows) {
      CAPTURE(x.name);
      CAPTURE(x.detail);
      CHECK(x.passed == (x.statistic <= x.threshold));
      if (x.applicable && !x.advisory) CHECK(x.passed);
    }
    // The stated small-time drift constant fails here: E|v_{s^2}|^2 = s^2/(1+s^2) exceeds s D / 4
    // at s = 1/15, while s D / 2 holds.
    const auto& st = row(rows, "drift-small-time");
    CHECK(st.advisory);
    CHECK_FALSE(st.passed);
    const double s = 1.0 / 15.0;
    CHECK(st.statistic == doctest::Approx(s * s / (1 + s * s) - 0.25 * s * r.d.value).epsilon(0.05));
    CHECK(row(rows, "drift-small-time-half").passed);
    CHECK(all_gating_passed(rows));
  }

  TEST_CASE("1-uniform quartic: mean Gamma dominates the covariance") {
    auto r = run(Measure::product({Family1D::quartic(1, 1)}, Mat::Identity(1, 1)), 100, 6000, 7);
    auto rows = run_checks(r.m, r.e, r.c, r.d);
    const auto& lo = row(rows, "gamma-lower-uniform");
    CHECK(lo.applicable);
    CHECK(lo.passed);
    CHECK(row(rows, "gamma-upper-uniform").passed);
    CHECK(row(rows, "idvtgamma").passed);
    CHECK(row(rows, "gamma-ode").passed);
    CHECK(all_gating_passed(rows));
  }

  TEST_CASE("a wrong entropy reference is caught") {
    auto r = run(Measure::gaussian(diag({2.0})), 80, 4000, 9);
    EntropyEstimate wrong = r.d;
    wrong.value *= 0.5;
    auto rows = run_checks(r.m, r.e, r.c, wrong);
    CHECK_FALSE(row(rows, "martingale-truncation").passed);
    CHECK_FALSE(all_gating_passed(rows));
  }

  TEST_CASE("pair checks on whitened pairs") {
    auto w = joint_whiten(Measure::gaussian(diag({2.0})), Measure::gaussian(diag({0.5})));
    auto x = run(w.x, 100, 4000, 11), y = run(w.y, 100, 4000, 12);
    auto rows = run_pair_checks(x.m, y.m, x.e, y.e, x.c, y.c, x.d, y.d);
    REQUIRE(rows.size() == pair_check_names().size());
    for (const auto& r : rows) {
      CAPTURE(r.name);
      CAPTURE(r.detail);
      CHECK(r.applicable);
      CHECK(r.passed);
    }
    // Not whitened: both inapplicable.
    auto a = run(Measure::gaussian(diag({2.0})), 40, 200, 1), b = run(Measure::gaussian(diag({2.0})), 40, 200, 2);
    for (const auto& r : run_pair_checks(a.m, b.m, a.e, b.e, a.c, b.c, a.d, b.d)) CHECK_FALSE(r.applicable);
  }

  TEST_CASE("ledger is deterministic and renders") {
    auto m = Measure::product({Family1D::quartic(1, 0.5)}, Mat::Identity(1, 1));
    auto a = run(m, 50, 1000, 4), b = run(m, 50, 1000, 4);
    const auto ja = checks_json(run_checks(a.m, a.e, a.c, a.d));
    CHECK(ja == checks_json(run_checks(b.m, b.e, b.c, b.d)));
    CHECK(ja.find("\"idvtgamma\"") != std::string::npos);
    CHECK(checks_table(run_checks(a.m, a.e, a.c, a.d)).find("gamma-ode") != std::string::npos);
  }
}
