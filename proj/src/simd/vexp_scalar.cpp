#include "fedprog/simd/vexp.hpp"

#include <cmath>

namespace fedprog::simd::detail {

void vexp_scalar(const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = std::exp(x[i]);
}

void gaussian_cross_scalar(const double* t, std::size_t rows,
                           const double* z, std::size_t cols,
                           double coef, double inv_two_a,
                           double* out, std::size_t ld) {
  for (std::size_t j = 0; j < cols; ++j) {
    const double zj = z[j];
    double* col = out + j * ld;
    for (std::size_t i = 0; i < rows; ++i) {
      const double d = t[i] - zj;
      col[i] = coef * std::exp(-d * d * inv_two_a);
    }
  }
}

}  // namespace fedprog::simd::detail
