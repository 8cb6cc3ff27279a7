#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fedprog/quadrature.hpp"

#include <cmath>

using namespace fedprog;

TEST_CASE("rule integrates polynomials of degree 2n-1 exactly") {
  // n = 4 integrates degree-7 polynomials exactly on [-1, 1]
  auto f = [](double x) {
    return 1.0 + x - 2.0 * std::pow(x, 3) + 0.5 * std::pow(x, 7);
  };
  const double got = gl_integrate(f, -1.0, 1.0, 4);
  CHECK(got == doctest::Approx(2.0).epsilon(1e-14));  // odd terms vanish
}

TEST_CASE("nodes symmetric, weights sum to interval length") {
  const GaussLegendre& rule = gauss_legendre(64);
  double wsum = 0.0;
  for (int i = 0; i < 64; ++i) {
    wsum += rule.weights[i];
    CHECK(rule.nodes[i] == doctest::Approx(-rule.nodes[63 - i]).epsilon(1e-13));
  }
  CHECK(wsum == doctest::Approx(2.0).epsilon(1e-14));
}

TEST_CASE("composite integration of a Gaussian bump") {
  auto f = [](double x) { return std::exp(-0.5 * x * x); };
  const double got = gl_integrate_segmented(f, -12.0, 12.0, 8, 64);
  CHECK(got == doctest::Approx(std::sqrt(2.0 * M_PI)).epsilon(1e-12));
}

TEST_CASE("refined integration converges and reports failure") {
  auto f = [](double x) { return std::sin(3.0 * x); };
  const double got = gl_integrate_refined(f, 0.0, 2.0, 1e-12);
  CHECK(got == doctest::Approx((1.0 - std::cos(6.0)) / 3.0).epsilon(1e-10));

  // convergence check must fail for a pathological integrand with an
  // impossible segment cap
  auto rough = [](double x) { return std::sin(1.0 / (x + 1e-12)); };
  CHECK_THROWS_AS(gl_integrate_refined(rough, 0.0, 1.0, 1e-14, 2, 4, 8),
                  std::runtime_error);
}
