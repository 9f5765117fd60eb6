#include "doctest.h"

#include "follmer/entropy.hpp"
#include "follmer/linalg.hpp"

#include <cmath>

using namespace follmer;

namespace {

Mat diag(std::initializer_list<double> v) {
  Vec d(static_cast<int>(v.size()));
  int i = 0;
  for (double x : v) d(i++) = x;
  return d.asDiagonal();
}

Mat rot(double a) {
  Mat r(2, 2);
  r << std::cos(a), -std::sin(a), std::sin(a), std::cos(a);
  return r;
}

Measure quartic1d(double a, double b) { return Measure::product({Family1D::quartic(a, b)}, Mat::Identity(1, 1)); }

Measure bimodal() {
  return Measure::mixture({0.5, 0.5}, {{Vec::Constant(1, -1.0), Mat::Constant(1, 1, 1.0)},
                                       {Vec::Constant(1, 1.0), Mat::Constant(1, 1, 1.0)}});
}

double gauss_d(double s2) { return 0.5 * (s2 - 1 - std::log(s2)); }

// scipy.integrate.quad at 1e-14 on log-safe integrands.
constexpr double kBimodalVsN2 = 0.009742769933141103;
constexpr double kQuarticD = 0.29729116058326605;
constexpr double kQuarticFisher = 2.6249718494306236;

}  // namespace

TEST_SUITE("entropy") {
  TEST_CASE("direct route closed forms") {
    CHECK(relative_entropy_direct(Measure::gaussian(Mat::Identity(1, 1))).value == doctest::Approx(0.0));
    auto e = relative_entropy_direct(Measure::gaussian(diag({2.0})));
    CHECK(e.route == EntropyRoute::GaussianClosedForm);
    CHECK(e.value == doctest::Approx(0.153426).epsilon(1e-6));
    CHECK(gaussian_kl(diag({2.0, 0.5}), Mat::Identity(2, 2)) == doctest::Approx(gauss_d(2) + gauss_d(0.5)).epsilon(1e-14));
  }

  TEST_CASE("mixture against its moment-matched Gaussian") {
    auto m = bimodal();
    auto e = relative_entropy_direct(m, diag({2.0}));
    CHECK(e.value >= 0.0);
    CHECK(e.value <= 0.06);
    CHECK(e.value == doctest::Approx(kBimodalVsN2).epsilon(1e-9));
    CHECK(e.stderr_ <= 1e-6);
    // Against G: D(m||G) = D(m||N(0,2)) + D(N(0,2)||G) since the reference is moment matched.
    CHECK(relative_entropy_direct(m).value == doctest::Approx(kBimodalVsN2 + gauss_d(2)).epsilon(1e-9));
  }

  TEST_CASE("potential entropy and relative Fisher information") {
    auto q = quartic1d(1, 1);
    CHECK(relative_entropy_direct(q).value == doctest::Approx(kQuarticD).epsilon(1e-8));
    REQUIRE(relative_fisher(q));
    CHECK(*relative_fisher(q) == doctest::Approx(kQuarticFisher).epsilon(1e-8));
    CHECK(*relative_fisher(Measure::gaussian(diag({2.0}))) == doctest::Approx(0.5).epsilon(1e-9));
    // Mixture Fisher via Gauss-Hermite: J of the mixture is at most the component J by convexity.
    const double rf = *relative_fisher(bimodal());
    CHECK(rf >= 0.0);
    CHECK(rf <= 1.0 - 2.0 + 2.0 + 1e-12);
  }

  TEST_CASE("Monte Carlo routes for N(0,2)") {
    auto m = Measure::gaussian(diag({2.0}));
    auto c = moment_curve(simulate_bridge(m, TimeGrid::geometric(200, 1e-4), 20000, 21));
    const double exact = gauss_d(2);
    for (const auto& e : {relative_entropy_drift(m, c), relative_entropy_gamma(m, c)}) {
      CHECK(std::abs(e.value - exact) <= std::max(2 * e.stderr_, 1e-3) * (1 + exact));
      CHECK(std::abs(e.value - exact) <= e.budget() + 1e-5);
      CHECK(e.tail_certified);
      CHECK(e.tail_bound >= 0.0);
    }
    // Gamma is deterministic for Gaussians: no statistical error.
    CHECK(relative_entropy_gamma(m, c).stderr_ < 1e-12);
    CHECK(std::abs(relative_entropy_gamma(m, c).value - exact) < 1e-5);
  }

  TEST_CASE("Monte Carlo routes for a quartic agree with quadrature") {
    auto m = quartic1d(1, 1);
    auto c = moment_curve(simulate_bridge(m, TimeGrid::geometric(120, 1e-4), 6000, 5));
    auto dr = relative_entropy_drift(m, c);
    auto ga = relative_entropy_gamma(m, c);
    CHECK(std::abs(dr.value - kQuarticD) <= dr.budget() + 1e-8);
    CHECK(std::abs(ga.value - kQuarticD) <= ga.budget() + 1e-8);
    CHECK(std::abs(dr.value - ga.value) <= dr.budget() + ga.budget());
    CHECK(dr.tail_certified);
  }

  TEST_CASE("monotone truncation") {
    auto m = quartic1d(1, 1);
    auto c = moment_curve(simulate_bridge(m, TimeGrid::geometric(120, 1e-4), 6000, 8));
    const double D = kQuarticD;
    for (double t0 : {0.1, 0.4, 0.7, 0.9}) {
      const std::size_t k0 = c.grid.first_at_or_after(t0);
      const double tk = c.grid[k0];
      std::vector<double> half(c.e_v2.size());
      for (std::size_t k = 0; k < half.size(); ++k) half[k] = 0.5 * c.e_v2[k];
      auto w = c.grid.weights(IntegrateIn::T, k0, c.grid.size() - 1);
      w.back() += 0.5 * c.grid.epsilon();
      auto ci = weighted_batch_sum(
          c, w, k0, [&](std::size_t k, int b) { return 0.5 * c.batch_v2[k][b]; }, [&](std::size_t k) { return half[k]; });
      const double slack = 2 * ci.stderr_ + 1e-4;
      CHECK(ci.value >= (1 - tk) * D - slack);
      CHECK(ci.value <= D + slack);
    }
  }

  TEST_CASE("Talagrand on Gaussians") {
    for (double s : {0.1, 0.5, 1.0, 2.0, 9.0}) {
      const Mat a = diag({s});
      CHECK(gaussian_w2_squared(a, Mat::Identity(1, 1)) <= 2 * gaussian_kl(a, Mat::Identity(1, 1)) + 1e-9);
    }
    const Mat a = rot(0.3) * diag({3.0, 0.2}) * rot(0.3).transpose();
    CHECK(gaussian_w2_squared(a, Mat::Identity(2, 2)) <= 2 * gaussian_kl(a, Mat::Identity(2, 2)) + 1e-9);
    CHECK(gaussian_w2_squared(diag({4.0}), Mat::Identity(1, 1)) == doctest::Approx(1.0));
  }

  TEST_CASE("deficit examples") {
    for (double lam : {0.1, 0.5, 0.9}) {
      auto r = deficit(Measure::gaussian(diag({3.0})), Measure::gaussian(diag({3.0})), lam);
      CHECK(std::abs(r.deficit) <= 1e-8);
    }
    auto r = deficit(Measure::gaussian(diag({2.0})), Measure::gaussian(diag({0.5})), 0.5);
    CHECK(r.deficit == doctest::Approx(0.11157177565710488).epsilon(1e-10));
    CHECK(r.deficit == doctest::Approx(0.5 * r.dX.value + 0.5 * r.dY.value - r.dConv.value).epsilon(1e-15));
    auto tiny = deficit(quartic1d(1, 1), bimodal(), 1e-6);
    CHECK(tiny.deficit <= 1e-4);
    CHECK(tiny.deficit >= -tiny.budget());
  }

  TEST_CASE("mixture convolution algebra") {
    auto z = convolve_closed_form(bimodal(), Measure::gaussian(diag({1.0})), 0.5);
    REQUIRE(z);
    CHECK(z->data().components.size() == 2);
    CHECK(z->covariance()(0, 0) == doctest::Approx(0.5 * 2.0 + 0.5));
    CHECK_FALSE(convolve_closed_form(quartic1d(1, 1), bimodal(), 0.5));
  }

  TEST_CASE("FFT convolution matches closed forms") {
    // A quartic with b = 0 is N(0, 1/a) but is handled as a potential.
    auto x = quartic1d(0.5, 0);
    auto y = Measure::gaussian(diag({0.5}));
    auto e = convolution_entropy(x, y, 0.5);
    CHECK(e.value == doctest::Approx(gauss_d(1.25)).epsilon(1e-7));
    CHECK(e.stderr_ < 1e-6);
    auto e2 = convolution_entropy(x, bimodal(), 0.3);
    auto zc = convolve_closed_form(Measure::gaussian(diag({2.0})), bimodal(), 0.3);
    CHECK(e2.value == doctest::Approx(relative_entropy_direct(*zc).value).epsilon(1e-7));

    // Axis-independent product in 2D: per-axis route.
    auto p = Measure::product({Family1D::quartic(0.5, 0), Family1D::quartic(2, 0)}, Mat::Identity(2, 2));
    auto e3 = convolution_entropy(p, Measure::gaussian(Mat::Identity(2, 2)), 0.5);
    CHECK(e3.value == doctest::Approx(gauss_d(1.5) + gauss_d(0.75)).epsilon(1e-7));

    // Rotated product: 2D tensor FFT.
    auto pr = Measure::product({Family1D::quartic(0.5, 0), Family1D::quartic(2, 0)}, rot(0.4));
    const Mat sx = rot(0.4) * diag({2.0, 0.5}) * rot(0.4).transpose();
    auto e4 = convolution_entropy(pr, Measure::gaussian(Mat::Identity(2, 2)), 0.5);
    CHECK(e4.value == doctest::Approx(gaussian_kl(Mat(0.5 * sx + 0.5 * Mat::Identity(2, 2)), Mat::Identity(2, 2))).epsilon(1e-5));
    CHECK(std::abs(e4.value - gaussian_kl(Mat(0.5 * sx + 0.5 * Mat::Identity(2, 2)), Mat::Identity(2, 2))) <= e4.stderr_ + 1e-8);

    // Dim 3 non-separable potentials have no route.
    CHECK_THROWS_AS(convolution_entropy(Measure::radial_quartic(3, 1, 1), Measure::radial_quartic(3, 1, 1), 0.5), Error);
  }

  TEST_CASE("Monte Carlo deficit route") {
    DeficitConfig cfg;
    cfg.route = DeficitRoute::MonteCarlo;
    cfg.grid = TimeGrid::geometric(100, 1e-4);
    cfg.n_paths = 3000;
    auto r = deficit(Measure::gaussian(diag({2.0})), Measure::gaussian(diag({0.5})), 0.5, cfg);
    CHECK(std::abs(r.deficit - 0.11157177565710488) <= r.budget());
    CHECK(r.provenance.seeds.size() == 3);
    CHECK(r.provenance.fingerprints.size() == 3);
  }

  TEST_CASE("differential entropy") {
    // h(N(0, s)) = 1/2 ln(2 pi e s).
    auto m = Measure::gaussian(diag({2.0}));
    CHECK(differential_entropy(m, gauss_d(2)) == doctest::Approx(0.5 * std::log(2 * M_PI * M_E * 2)).epsilon(1e-14));
  }
}
