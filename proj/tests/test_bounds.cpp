#include "doctest.h"

#include "follmer/bounds.hpp"
#include "follmer/linalg.hpp"

#include <cmath>
#include <random>

using namespace follmer;

namespace {

Mat diag(std::initializer_list<double> v) {
  Vec d(static_cast<int>(v.size()));
  int i = 0;
  for (double x : v) d(i++) = x;
  return d.asDiagonal();
}

Measure quartic1d(double a, double b) { return Measure::product({Family1D::quartic(a, b)}, Mat::Identity(1, 1)); }

Measure isotropic(const Measure& m) { return m.transformed(linalg::inv_sqrtm_spd(m.covariance())); }

Eigen::MatrixXd random_spd(int d, std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Eigen::MatrixXd g(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) g(i, j) = n(rng);
  return g * g.transpose() + 0.05 * Eigen::MatrixXd::Identity(d, d);
}

double gauss_kl1(double a, double b) { return 0.5 * (a / b - 1 - std::log(a / b)); }

// scipy.integrate.quad of the closed-form Gamma curves of N(0,2), N(0,1/2), l = 1/2, over [0, 1 - 1e-4].
constexpr double kJumpGauss = 0.10675376846307408;
constexpr double kJumpCtGauss = 0.03881132382724802;
// int_0^1 (1 - 0.5/(1 - 0.5 t))^2 dt.
constexpr double kW2Cross = 0.1137056388801094;
constexpr double kGaussDeficit = 0.11157177565710488;

}  // namespace

TEST_SUITE("bounds") {
  TEST_CASE("matrix identity") {
    Eigen::MatrixXd a(1, 1), b(1, 1);
    a << 1;
    b << 3;
    auto g = matrix_gap(a, b, 0.5);
    CHECK(g.lhs == doctest::Approx(std::sqrt(5.0) - 2).epsilon(1e-14));
    CHECK(g.rhs == doctest::Approx(1 / (std::sqrt(5.0) + 2)).epsilon(1e-14));
    auto z = matrix_gap(a, a, 0.3);
    CHECK(z.lhs == doctest::Approx(0.0));
    CHECK(z.rhs == doctest::Approx(0.0));

    std::mt19937_64 rng(2024);
    double worst = 0;
    for (int trial = 0; trial < 1000; ++trial) {
      const int d = 1 + trial % 8;
      const double lam = 0.1 * (1 + trial % 9);
      auto r = matrix_gap(random_spd(d, rng), random_spd(d, rng), lam);
      worst = std::max(worst, std::abs(r.lhs - r.rhs) / (1 + std::abs(r.lhs)));
      CHECK(r.lhs >= -1e-12);
    }
    CHECK(worst <= 1e-10);
    CHECK_THROWS_AS(matrix_gap(-a, b, 0.5), Error);
  }

  TEST_CASE("jump bounds on Gaussians") {
    auto grid = TimeGrid::geometric(200, 1e-4);
    auto id = Measure::gaussian(Mat::Identity(2, 2));
    auto e1 = simulate_bridge(id, grid, 100, 1), e2 = simulate_bridge(id, grid, 100, 2);
    CHECK(jump_bound(e1, e2, 0.3).rhs == doctest::Approx(0.0));
    CHECK(jump_bound_ct(e1, e2, 0.3, CtRule::Uniform, 1.0).rhs == doctest::Approx(0.0));

    auto ex = simulate_bridge(Measure::gaussian(diag({2.0})), grid, 200, 3);
    auto ey = simulate_bridge(Measure::gaussian(diag({0.5})), grid, 200, 4);
    auto jb = jump_bound(ex, ey, 0.5);
    CHECK(std::abs(jb.rhs - kJumpGauss) <= jb.residual + 1e-7);
    CHECK(jb.rhs <= kGaussDeficit);
    auto jc = jump_bound_ct(ex, ey, 0.5, CtRule::LogConcave);
    CHECK(std::abs(jc.rhs - kJumpCtGauss) <= jc.residual + 1e-7);
    CHECK(jc.rhs <= jb.rhs);
    // N(0,2) is only 1/2-uniform: the xi = 1 envelope fails.
    CHECK_THROWS_AS(jump_bound_ct(ex, ey, 0.5, CtRule::Uniform, 1.0), Error);
    CHECK_THROWS_AS(jump_bound(ex, simulate_bridge(Measure::gaussian(diag({0.5})), TimeGrid::geometric(100, 1e-4), 200, 4), 0.5),
                    Error);
  }

  TEST_CASE("jump bounds on a 1-uniform pair") {
    auto grid = TimeGrid::geometric(80, 1e-3);
    auto m = quartic1d(1, 1);
    auto ex = simulate_bridge(m, grid, 4000, 10), ey = simulate_bridge(m, grid, 4000, 11);
    auto jb = jump_bound(ex, ey, 0.5);
    auto jc = jump_bound_ct(ex, ey, 0.5, CtRule::Uniform, 1.0);
    CHECK(jb.rhs > 0);
    CHECK(jc.rhs >= 0);
    CHECK(jc.rhs <= jb.rhs + 2 * jb.stderr_);
    auto d = deficit(m, m, 0.5);
    CHECK(jb.rhs <= d.deficit + d.budget() + 2 * jb.stderr_ + jb.residual);
  }

  TEST_CASE("Gaussian surrogates") {
    auto grid = TimeGrid::geometric(200, 1e-4);
    for (double s2 : {0.5, 1.0, 2.0}) {
      auto c = moment_curve(simulate_bridge(Measure::gaussian(diag({s2})), grid, 100, 1));
      CHECK(std::abs(gaussian_surrogate(c).cov(0, 0) - s2) <= 1e-6);
    }
    const Mat a = diag({2.0, 0.5});
    auto c2 = moment_curve(simulate_bridge(Measure::gaussian(a), grid, 100, 1));
    CHECK((gaussian_surrogate(c2).cov - a).cwiseAbs().maxCoeff() <= 1e-6);

    auto cq = moment_curve(simulate_bridge(quartic1d(1, 1), TimeGrid::geometric(80, 1e-3), 4000, 2));
    auto sq = gaussian_surrogate(cq);
    CHECK(sq.cov(0, 0) > 0);
    CHECK(sq.cov(0, 0) <= 1.0);
    CHECK(sq.se(0, 0) > 0);
  }

  TEST_CASE("thm1 and cor2 on isotropic quartics") {
    auto grid = TimeGrid::geometric(200, 1e-4);
    auto n1 = Measure::gaussian(diag({1.0})), nh = Measure::gaussian(diag({0.5}));
    auto c1 = moment_curve(simulate_bridge(n1, grid, 100, 1));
    auto ch = moment_curve(simulate_bridge(nh, grid, 100, 2));
    CHECK(thm1_rhs(n1, n1, c1, c1, 0.4).rhs == doctest::Approx(0.0));
    auto r = thm1_rhs(n1, nh, c1, ch, 0.5);
    REQUIRE(r.applicable);
    const double expect = 0.125 * (0.5 * gauss_kl1(1, 0.5) + 0.125 * gauss_kl1(0.5, 1));
    CHECK(r.rhs == doctest::Approx(expect).epsilon(1e-5));
    CHECK(r.rhs <= 0.5 * gauss_kl1(0.5, 1) - gauss_kl1(0.75, 1));
    auto n2 = Measure::gaussian(diag({2.0}));
    CHECK_FALSE(thm1_rhs(n2, n1, c1, c1, 0.5).applicable);
    auto tiny = Measure::gaussian(diag({1e-11}));
    CHECK_THROWS_AS(thm1_rhs(tiny, n1, c1, c1, 0.5), Error);

    // Isotropic quartic: cor2 on X equals thm1 on sqrt(xi) X.
    auto x = isotropic(quartic1d(1, 1));
    const double xi = *x.xi();
    auto xs = x.transformed(Mat::Constant(1, 1, std::sqrt(xi)));
    auto y = isotropic(quartic1d(1, 0.3));
    const double xi2 = std::min(xi, *y.xi());
    auto xs2 = x.transformed(Mat::Constant(1, 1, std::sqrt(xi2)));
    auto ys2 = y.transformed(Mat::Constant(1, 1, std::sqrt(xi2)));
    auto g = TimeGrid::geometric(60, 1e-3);
    auto cx = moment_curve(simulate_bridge(xs2, g, 2000, 5));
    auto cy = moment_curve(simulate_bridge(ys2, g, 2000, 6));
    auto cr = cor2_rhs(x, y, cx, cy, 0.5, xi2);
    auto tr = thm1_rhs(xs2.with_xi(1.0), ys2.with_xi(1.0), cx, cy, 0.5);
    REQUIRE(cr.applicable);
    CHECK(cr.rhs == doctest::Approx(tr.rhs).epsilon(1e-9));
    CHECK_FALSE(cor2_rhs(quartic1d(1, 1), y, cx, cy, 0.5, xi2).applicable);
    (void)xs;
  }

  TEST_CASE("thm3 explicit constant") {
    auto x = Measure::gaussian(diag({1.5})), y = Measure::gaussian(diag({0.5}));
    auto dx = relative_entropy_direct(x), dy = relative_entropy_direct(y);
    auto r = thm3_rhs(x, y, 0.5, dx, dy);
    REQUIRE(r.applicable);
    const double xi = 0.5 / 9.0;
    CHECK(r.inputs.at("xi") == doctest::Approx(xi).epsilon(1e-14));
    CHECK(r.rhs == doctest::Approx(3.083012607722274e-06).epsilon(1e-9));
    CHECK(r.rhs <= deficit(x, y, 0.5).deficit);
    auto n1 = Measure::gaussian(diag({1.0}));
    CHECK(thm3_rhs(n1, n1, 0.5, relative_entropy_direct(n1), relative_entropy_direct(n1)).rhs == 0.0);
    CHECK_FALSE(thm3_rhs(x, x, 0.5, dx, dx).applicable);
  }

  TEST_CASE("thm4 hypotheses") {
    auto n1 = Measure::gaussian(diag({1.0}));
    auto d0 = relative_entropy_direct(n1);
    CHECK(thm4_rhs(n1, n1, 0.5, d0, d0, 1.0).rhs == 0.0);
    EntropyEstimate big;
    big.value = 0.3;
    auto r = thm4_rhs(n1, n1, 0.5, big, d0, 1.0);
    CHECK_FALSE(r.applicable);
    CHECK(r.reason.find("1/4") != std::string::npos);

    auto x = isotropic(quartic1d(1, 0.02)), y = isotropic(quartic1d(1, 0.05));
    auto dx = relative_entropy_direct(x), dy = relative_entropy_direct(y);
    const double cp = std::max(poincare_bound(x).value, poincare_bound(y).value);
    auto t4 = thm4_rhs(x, y, 0.5, dx, dy, cp);
    REQUIRE(t4.applicable);
    auto d = deficit(x, y, 0.5);
    CHECK(t4.rhs > 0);
    CHECK(t4.rhs <= d.deficit + d.budget());
  }

  TEST_CASE("thm5 coefficient") {
    CHECK(thm5_coefficient(0.5, 2.0) == doctest::Approx(0.19192105823129485).epsilon(1e-12));
    for (double cp : {0.3, 1.0, 2.0, 10.0}) CHECK(std::abs(thm5_coefficient(1.0, cp)) < 1e-12);
    // Continuity through cp = 1, where the limit is l(1-l).
    for (double lam : {0.1, 0.5, 0.9}) {
      CHECK(thm5_coefficient(lam, 1.0) == doctest::Approx(lam * (1 - lam)).epsilon(1e-12));
      CHECK(thm5_coefficient(lam, 1.0 + 1e-7) == doctest::Approx(thm5_coefficient(lam, 1.0)).epsilon(1e-6));
      CHECK(thm5_coefficient(lam, 1.0 + 2e-3) == doctest::Approx(thm5_coefficient(lam, 1.0)).epsilon(3e-3));
    }
    for (int i = 1; i < 100; ++i)
      for (double cp = 1.0; cp <= 50.0; cp *= 1.1) {
        const double lam = i / 100.0;
        CHECK(thm5_coefficient(lam, cp) >= lam * (1 - lam) / cp - 1e-14);
      }
    CHECK(thm5_coefficient(1e-6, 3.0) < 1e-5);
  }

  TEST_CASE("wasserstein-thm bound") {
    auto grid = TimeGrid::geometric(200, 1e-4);
    auto n1 = Measure::gaussian(diag({1.0})), nh = Measure::gaussian(diag({0.5}));
    auto c1 = moment_curve(simulate_bridge(n1, grid, 100, 1));
    auto ch = moment_curve(simulate_bridge(nh, grid, 100, 2));
    CHECK(wasserstein_thm_rhs(n1, n1, c1, c1, 0.5).rhs == doctest::Approx(0.0));
    auto r = wasserstein_thm_rhs(n1, nh, c1, ch, 0.5);
    CHECK(r.inputs.at("W2sq_X_GX_upper") == doctest::Approx(0.0));
    CHECK(r.inputs.at("W2sq_Y_GY_upper") == doctest::Approx(0.0));
    CHECK(std::abs(r.inputs.at("W2sq_GX_GY_upper") - kW2Cross) <= 1e-6);
    CHECK(r.rhs <= 0.5 * gauss_kl1(0.5, 1) - gauss_kl1(0.75, 1));
  }

  TEST_CASE("degenerate lambda") {
    auto x = Measure::gaussian(diag({1.5})), y = Measure::gaussian(diag({0.5}));
    auto dx = relative_entropy_direct(x), dy = relative_entropy_direct(y);
    for (double lam : {1e-9, 1 - 1e-9}) {
      CHECK(thm3_rhs(x, y, lam, dx, dy).rhs < 1e-12);
      CHECK(std::abs(thm5_rhs(x, lam, dx, 2.0).rhs) < 1e-8);
    }
  }
}
