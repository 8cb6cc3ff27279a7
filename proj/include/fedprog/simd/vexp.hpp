#pragma once

#include <cstddef>

// Vectorized inner loops shared by the kernel and quadrature code. Scalar
// reference implementations and an AVX2 variant are selected once at startup;
// equivalence between the two is covered by tests/test_simd.cpp.
namespace fedprog::simd {

/// y[i] = exp(x[i]) for i in [0, n).
void vexp(const double* x, double* y, std::size_t n);

/// Column-major Gaussian cross block:
///   out[j * ld + i] = coef * exp(-(t[i] - z[j])^2 * inv_two_a)
/// for i in [0, rows), j in [0, cols). ld >= rows.
void gaussian_cross(const double* t, std::size_t rows,
                    const double* z, std::size_t cols,
                    double coef, double inv_two_a,
                    double* out, std::size_t ld);

/// Name of the active backend: "avx2" or "scalar".
const char* backend_name();

/// Force a backend by name (test hook). Returns false if unavailable.
bool force_backend(const char* name);

namespace detail {
void vexp_scalar(const double* x, double* y, std::size_t n);
void gaussian_cross_scalar(const double* t, std::size_t rows,
                           const double* z, std::size_t cols,
                           double coef, double inv_two_a,
                           double* out, std::size_t ld);
#if defined(__x86_64__) || defined(_M_X64)
void vexp_avx2(const double* x, double* y, std::size_t n);
void gaussian_cross_avx2(const double* t, std::size_t rows,
                         const double* z, std::size_t cols,
                         double coef, double inv_two_a,
                         double* out, std::size_t ld);
bool avx2_available();
#endif
}  // namespace detail

}  // namespace fedprog::simd
