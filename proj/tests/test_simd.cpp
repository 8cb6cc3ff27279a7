#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fedprog/simd/vexp.hpp"

#include <cmath>
#include <random>
#include <string>
#include <vector>

using namespace fedprog;

namespace {
bool have_avx2() { return simd::force_backend("avx2"); }
}  // namespace

TEST_CASE("vexp matches std::exp on the scalar backend") {
  REQUIRE(simd::force_backend("scalar"));
  std::vector<double> x{-3.5, -1.0, 0.0, 0.5, 2.25, 10.0};
  std::vector<double> y(x.size());
  simd::vexp(x.data(), y.data(), x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    CHECK(y[i] == doctest::Approx(std::exp(x[i])).epsilon(1e-15));
}

TEST_CASE("avx2 vexp equivalent to scalar reference") {
  if (!have_avx2()) return;  // nothing to compare on this host
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> wide(-700.0, 700.0);
  std::uniform_real_distribution<double> kernelish(-60.0, 0.0);
  std::vector<double> x(4097);
  for (std::size_t i = 0; i < x.size(); ++i)
    x[i] = (i % 2 == 0) ? wide(rng) : kernelish(rng);
  x[0] = 0.0;
  x[1] = 709.43;
  x[2] = -708.3;
  x[3] = -745.0;  // subnormal region: flushed to zero by the AVX2 path

  std::vector<double> ref(x.size()), got(x.size());
  REQUIRE(simd::force_backend("scalar"));
  simd::vexp(x.data(), ref.data(), x.size());
  REQUIRE(simd::force_backend("avx2"));
  simd::vexp(x.data(), got.data(), x.size());

  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] < -708.39) {
      CHECK(std::abs(got[i] - ref[i]) <= 3e-308);
    } else {
      CHECK(got[i] ==
            doctest::Approx(ref[i]).epsilon(1e-13));
    }
  }
  simd::force_backend("scalar");
  REQUIRE(std::string(simd::backend_name()) == "scalar");
  simd::force_backend("avx2");
}

TEST_CASE("gaussian_cross blocks agree across backends") {
  if (!have_avx2()) return;
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-10.0, 10.0);
  const std::size_t rows = 37, cols = 13;
  std::vector<double> t(rows), z(cols);
  for (auto& v : t) v = u(rng);
  for (auto& v : z) v = u(rng);
  const double coef = 1.7, inv2a = 0.09;

  std::vector<double> a(rows * cols), b(rows * cols);
  REQUIRE(simd::force_backend("scalar"));
  simd::gaussian_cross(t.data(), rows, z.data(), cols, coef, inv2a, a.data(),
                       rows);
  REQUIRE(simd::force_backend("avx2"));
  simd::gaussian_cross(t.data(), rows, z.data(), cols, coef, inv2a, b.data(),
                       rows);
  for (std::size_t i = 0; i < a.size(); ++i)
    CHECK(b[i] == doctest::Approx(a[i]).epsilon(1e-13));
}

TEST_CASE("gaussian_cross respects leading dimension and values") {
  simd::force_backend("scalar");
  std::vector<double> t{0.0, 1.0, 2.0};
  std::vector<double> z{1.0};
  std::vector<double> out(5, -1.0);
  simd::gaussian_cross(t.data(), 3, z.data(), 1, 2.0, 0.5, out.data(), 5);
  CHECK(out[0] == doctest::Approx(2.0 * std::exp(-0.5)));
  CHECK(out[1] == doctest::Approx(2.0));
  CHECK(out[2] == doctest::Approx(2.0 * std::exp(-0.5)));
  CHECK(out[3] == -1.0);  // padding untouched
#if defined(__x86_64__)
  simd::force_backend("avx2");
#endif
}
