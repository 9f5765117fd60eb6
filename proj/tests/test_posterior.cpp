#include "doctest.h"

#include "follmer/linalg.hpp"
#include "follmer/posterior.hpp"

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

Mat rot(double a) {
  Mat r(2, 2);
  r << std::cos(a), -std::sin(a), std::sin(a), std::cos(a);
  return r;
}

Vec v1(double x) { return Vec::Constant(1, x); }

// The Gaussian N(0, cov) written as a generic potential, forcing the quadrature route.
Measure gaussian_as_potential(const Mat& cov) {
  const Mat prec = cov.inverse();
  return Measure::potential(
      cov.rows(), [prec](const Vec& y) { return -0.5 * y.dot(prec * y); },
      [prec](const Vec& y) { return Vec(-prec * y); }, [prec](const Vec&) { return Mat(-prec); }, std::nullopt,
      "gauss-potential", true);
}

std::vector<Measure> library() {
  return {
      Measure::gaussian(diag({2.0})),
      Measure::gaussian(rot(0.4) * diag({2.0, 0.5}) * rot(0.4).transpose()),
      Measure::mixture({0.5, 0.5}, {{v1(-1.0), Mat::Constant(1, 1, 0.6)}, {v1(1.0), Mat::Constant(1, 1, 0.6)}}),
      Measure::mixture({0.3, 0.7}, {{Vec::Constant(2, 1.0), diag({0.5, 1.0})}, {Vec::Constant(2, -0.5), diag({1.0, 0.7})}}),
      Measure::product({Family1D::quartic(1, 1)}, Mat::Identity(1, 1)),
      Measure::product({Family1D::logistic(0.5)}, Mat::Constant(1, 1, 1.0)),
      Measure::product({Family1D::quartic(1, 0.3), Family1D::logistic(0.4)}, rot(0.7) * diag({1.5, 0.8})),
      Measure::radial_quartic(2, 1.0, 0.5),
  };
}

}  // namespace

TEST_SUITE("posterior") {
  TEST_CASE("Gaussian closed forms") {
    for (double s2 : {0.5, 2.0, 3.0}) {
      const PosteriorEngine eng(Measure::gaussian(diag({s2})));
      for (double t : {0.0, 0.3, 0.9}) {
        for (double x : {-1.0, 0.5}) {
          auto p = eng(t, v1(x));
          CHECK(p.gamma(0, 0) == doctest::Approx(s2 / (1 + t * (s2 - 1))).epsilon(1e-13));
          CHECK(p.drift(0) == doctest::Approx((s2 - 1) * x / (1 + t * (s2 - 1))).epsilon(1e-13));
        }
      }
    }
    const PosteriorEngine id(Measure::gaussian(Mat::Identity(2, 2)));
    for (double t : {0.0, 0.5, 0.95}) {
      auto p = id(t, Vec::Constant(2, 0.8));
      CHECK((p.gamma - Mat::Identity(2, 2)).norm() < 1e-14);
      CHECK(p.drift.norm() < 1e-14);
      CHECK((p.mean - Vec::Constant(2, 0.8)).norm() < 1e-14);
    }
  }

  TEST_CASE("at t = 0 and x = 0 the posterior is the measure itself") {
    for (const auto& m : library()) {
      auto p = posterior_moments(m, 0.0, Vec::Zero(m.dim()));
      CHECK(p.mean.norm() < 1e-8);
      CHECK((p.cov - m.covariance()).norm() < 1e-8 * (1 + m.covariance().norm()));
      CHECK((p.gamma - p.cov).norm() == 0.0);
      CHECK(std::abs(p.log_mass) < 1e-8);
    }
  }

  TEST_CASE("heat semigroup gradient examples") {
    CHECK(heat_loggrad(Measure::gaussian(Mat::Identity(2, 2)), 0.4, Vec::Constant(2, 0.7)).norm() < 1e-8);
    CHECK(heat_loggrad(Measure::gaussian(diag({2.0})), 0.5, v1(1.0))(0) == doctest::Approx(1.0 / 1.5).epsilon(1e-7));
    CHECK(heat_loggrad(Measure::gaussian(diag({0.5})), 0.0, v1(1.0))(0) == doctest::Approx(-0.5).epsilon(1e-7));
  }

  TEST_CASE("log mass reproduces the heat semigroup") {
    for (const auto& m : library()) {
      for (double t : {0.0, 0.4, 0.9}) {
        Vec x = Vec::Constant(m.dim(), 0.6);
        auto p = posterior_moments(m, t, x);
        const double lhs = p.log_mass - 0.5 * m.dim() * std::log(1 - t) - x.squaredNorm() / (2 * (1 - t));
        CHECK(lhs == doctest::Approx(heat_log_semigroup(m, t, x)).epsilon(1e-8));
      }
    }
  }

  TEST_CASE("drift agrees with the semigroup gradient on random triples") {
    const auto lib = library();
    std::mt19937_64 rng(20261018);
    std::uniform_real_distribution<double> ut(0.0, 0.99);
    std::normal_distribution<double> nx(0.0, 1.5);
    double worst = 0;
    for (int i = 0; i < 200; ++i) {
      const auto& m = lib[i % lib.size()];
      const double t = ut(rng);
      Vec x(m.dim());
      for (int a = 0; a < m.dim(); ++a) x(a) = nx(rng);
      auto p = posterior_moments(m, t, x);
      Vec g = heat_loggrad(m, t, x);
      const double err = (p.drift - g).norm() / (1 + p.drift.norm());
      worst = std::max(worst, err);
      CHECK_MESSAGE(err <= 1e-4, m.label(), " t=", t);
    }
    MESSAGE("worst relative drift mismatch ", worst);
  }

  TEST_CASE("covariance upper bounds for log-concave measures") {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> nx(0.0, 2.0);
    for (const auto& m : library()) {
      if (!m.log_concave()) continue;
      for (double t : {0.05, 0.3, 0.7, 0.98}) {
        for (int k = 0; k < 5; ++k) {
          Vec x(m.dim());
          for (int a = 0; a < m.dim(); ++a) x(a) = nx(rng);
          auto p = posterior_moments(m, t, x);
          CHECK(linalg::max_eigenvalue(p.gamma) <= (1.0 / t) * (1 + 1e-8));
          if (m.xi()) {
            const double cap = 1.0 / ((1 - t) * *m.xi() + t);
            CHECK(linalg::max_eigenvalue(p.gamma) <= cap * (1 + 1e-8));
          }
          CHECK(linalg::min_eigenvalue(p.cov) >= 0.0);
          CHECK(linalg::is_symmetric(p.cov));
        }
      }
    }
  }

  TEST_CASE("mixture responsibilities form a simplex") {
    auto m = library()[3];
    const PosteriorEngine eng(m);
    for (double t : {0.0, 0.5, 0.99}) {
      for (double x : {-8.0, 0.0, 3.0}) {
        auto p = eng(t, Vec::Constant(2, x));
        double sum = 0;
        for (double w : p.weights) {
          CHECK(w >= 0.0);
          sum += w;
        }
        CHECK(std::abs(sum - 1.0) <= 1e-12);
      }
    }
  }

  TEST_CASE("quadrature routes match the Gaussian closed form") {
    const Mat cov = rot(0.3) * diag({1.7, 0.6}) * rot(0.3).transpose();
    const PosteriorEngine exact(Measure::gaussian(cov));
    const PosteriorEngine quad(gaussian_as_potential(cov));
    const PosteriorEngine quartic(Measure::product({Family1D::quartic(2.0, 0.0)}, Mat::Identity(1, 1)));
    const PosteriorEngine g1(Measure::gaussian(diag({0.5})));
    for (double t : {0.0, 0.2, 0.6, 0.95}) {
      Vec x(2);
      x << 0.9, -1.3;
      auto a = exact(t, x);
      auto b = quad(t, x);
      CHECK((a.gamma - b.gamma).cwiseAbs().maxCoeff() <= 1e-8 * a.gamma.cwiseAbs().maxCoeff());
      CHECK((a.drift - b.drift).norm() <= 1e-8 * (1 + a.drift.norm()));
      CHECK(a.log_mass == doctest::Approx(b.log_mass).epsilon(1e-8));
      auto c = quartic(t, v1(0.7));
      auto d = g1(t, v1(0.7));
      CHECK(c.gamma(0, 0) == doctest::Approx(d.gamma(0, 0)).epsilon(1e-8));
      CHECK(c.drift(0) == doctest::Approx(d.drift(0)).epsilon(1e-8));
      CHECK(c.log_mass == doctest::Approx(d.log_mass).epsilon(1e-8));
    }
  }

  TEST_CASE("time outside [0, 1) is rejected") {
    const PosteriorEngine eng(Measure::gaussian(diag({2.0})));
    for (double t : {1.0, 1.5, -0.1}) {
      try {
        eng(t, v1(0.0));
        FAIL("expected TimeOutOfRange");
      } catch (const Error& e) {
        CHECK(e.code() == Errc::TimeOutOfRange);
      }
    }
  }

  TEST_CASE("logistic factor with an unbounded tilt is not normalizable") {
    auto f = Family1D::logistic(1.0);
    CHECK_NOTHROW(family_posterior(*f, 0.5, 0.0));
    CHECK_THROWS_AS(family_posterior(*f, 1.5, 0.0), Error);
  }
}
