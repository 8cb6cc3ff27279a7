#pragma once

#include <functional>
#include <vector>

namespace fedprog {

/// Gauss-Legendre rule on [-1, 1]. Nodes ascending.
struct GaussLegendre {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// Rule of order n (n >= 1), cached after first computation.
const GaussLegendre& gauss_legendre(int n);

/// Integral of f over [a, b] with a single n-point rule.
double gl_integrate(const std::function<double(double)>& f, double a, double b,
                    int n = 64);

/// Composite rule: [a, b] split into `segments` equal pieces, n points each.
double gl_integrate_segmented(const std::function<double(double)>& f, double a,
                              double b, int segments, int n = 64);

/// Integral with a refinement check: segment count is doubled until two
/// consecutive estimates agree to `tol` (relative to scale of the value), up
/// to `max_segments`. Throws std::runtime_error with the residual estimate if
/// it fails to converge.
double gl_integrate_refined(const std::function<double(double)>& f, double a,
                            double b, double tol, int initial_segments = 4,
                            int max_segments = 4096, int n = 32);

}  // namespace fedprog
