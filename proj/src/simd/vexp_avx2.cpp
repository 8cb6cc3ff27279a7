// AVX2 + FMA variants. Compiled with -mavx2 -mfma; only dispatched to when the
// CPU reports both features.

#include "fedprog/simd/vexp.hpp"

#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include <cmath>

namespace fedprog::simd::detail {

namespace {

// Range limits: above EXP_HI the result overflows to inf; below EXP_LO the
// true value is subnormal or zero, which the 2^n exponent trick cannot
// represent, so those lanes are flushed to zero.
constexpr double kExpHi = 709.436;
constexpr double kExpLo = -708.39;

// exp(x) for 4 doubles. Cephes-style: x = n*ln2 + r, exp(r) via a rational
// approximation in r^2, then scale by 2^n through the exponent bits.
inline __m256d exp_pd(__m256d x) {
  const __m256d hi = _mm256_set1_pd(kExpHi);
  const __m256d lo = _mm256_set1_pd(kExpLo);
  const __m256d log2e = _mm256_set1_pd(1.4426950408889634073599);
  const __m256d half = _mm256_set1_pd(0.5);
  const __m256d c1 = _mm256_set1_pd(0.693145751953125);
  const __m256d c2 = _mm256_set1_pd(1.42860682030941723212e-6);

  const __m256d p0 = _mm256_set1_pd(1.26177193074810590878e-4);
  const __m256d p1 = _mm256_set1_pd(3.02994407707441961300e-2);
  const __m256d p2 = _mm256_set1_pd(9.99999999999999999910e-1);
  const __m256d q0 = _mm256_set1_pd(3.00198505138664455042e-6);
  const __m256d q1 = _mm256_set1_pd(2.52448340349684104192e-3);
  const __m256d q2 = _mm256_set1_pd(2.27265548208155028766e-1);
  const __m256d q3 = _mm256_set1_pd(2.00000000000000000005e0);
  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d two = _mm256_set1_pd(2.0);

  const __m256d under = _mm256_cmp_pd(x, lo, _CMP_LT_OQ);
  __m256d xc = _mm256_min_pd(_mm256_max_pd(x, lo), hi);

  __m256d fx = _mm256_floor_pd(_mm256_fmadd_pd(xc, log2e, half));
  __m256d r = _mm256_fnmadd_pd(fx, c1, xc);
  r = _mm256_fnmadd_pd(fx, c2, r);
  const __m256d r2 = _mm256_mul_pd(r, r);

  __m256d px = _mm256_fmadd_pd(p0, r2, p1);
  px = _mm256_fmadd_pd(px, r2, p2);
  px = _mm256_mul_pd(px, r);
  __m256d qx = _mm256_fmadd_pd(q0, r2, q1);
  qx = _mm256_fmadd_pd(qx, r2, q2);
  qx = _mm256_fmadd_pd(qx, r2, q3);

  __m256d e = _mm256_div_pd(px, _mm256_sub_pd(qx, px));
  e = _mm256_fmadd_pd(two, e, one);

  const __m128i n32 = _mm256_cvtpd_epi32(fx);
  const __m256i n64 = _mm256_cvtepi32_epi64(n32);
  const __m256i pow2 =
      _mm256_slli_epi64(_mm256_add_epi64(n64, _mm256_set1_epi64x(1023)), 52);
  e = _mm256_mul_pd(e, _mm256_castsi256_pd(pow2));

  return _mm256_andnot_pd(under, e);
}

}  // namespace

void vexp_avx2(const double* x, double* y, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, exp_pd(_mm256_loadu_pd(x + i)));
  }
  for (; i < n; ++i) y[i] = std::exp(x[i]);
}

void gaussian_cross_avx2(const double* t, std::size_t rows,
                         const double* z, std::size_t cols,
                         double coef, double inv_two_a,
                         double* out, std::size_t ld) {
  const __m256d vcoef = _mm256_set1_pd(coef);
  const __m256d vneg_inv = _mm256_set1_pd(-inv_two_a);
  for (std::size_t j = 0; j < cols; ++j) {
    const __m256d zj = _mm256_set1_pd(z[j]);
    double* col = out + j * ld;
    std::size_t i = 0;
    for (; i + 4 <= rows; i += 4) {
      const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(t + i), zj);
      const __m256d arg = _mm256_mul_pd(_mm256_mul_pd(d, d), vneg_inv);
      _mm256_storeu_pd(col + i, _mm256_mul_pd(vcoef, exp_pd(arg)));
    }
    for (; i < rows; ++i) {
      const double d = t[i] - z[j];
      col[i] = coef * std::exp(-d * d * inv_two_a);
    }
  }
}

bool avx2_available() {
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
}

}  // namespace fedprog::simd::detail

#endif  // x86_64
