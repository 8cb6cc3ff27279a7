#include "fedprog/simd/vexp.hpp"

#include <cstring>

namespace fedprog::simd {

namespace {

struct Backend {
  void (*vexp)(const double*, double*, std::size_t);
  void (*gauss)(const double*, std::size_t, const double*, std::size_t,
                double, double, double*, std::size_t);
  const char* name;
};

constexpr Backend kScalar{detail::vexp_scalar, detail::gaussian_cross_scalar,
                          "scalar"};

#if defined(__x86_64__) || defined(_M_X64)
constexpr Backend kAvx2{detail::vexp_avx2, detail::gaussian_cross_avx2, "avx2"};
#endif

Backend pick() {
#if defined(__x86_64__) || defined(_M_X64)
  if (detail::avx2_available()) return kAvx2;
#endif
  return kScalar;
}

Backend g_active = pick();

}  // namespace

void vexp(const double* x, double* y, std::size_t n) { g_active.vexp(x, y, n); }

void gaussian_cross(const double* t, std::size_t rows, const double* z,
                    std::size_t cols, double coef, double inv_two_a,
                    double* out, std::size_t ld) {
  g_active.gauss(t, rows, z, cols, coef, inv_two_a, out, ld);
}

const char* backend_name() { return g_active.name; }

bool force_backend(const char* name) {
  if (std::strcmp(name, "scalar") == 0) {
    g_active = kScalar;
    return true;
  }
#if defined(__x86_64__) || defined(_M_X64)
  if (std::strcmp(name, "avx2") == 0 && detail::avx2_available()) {
    g_active = kAvx2;
    return true;
  }
#endif
  return false;
}

}  // namespace fedprog::simd
