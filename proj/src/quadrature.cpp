#include "fedprog/quadrature.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <stdexcept>
#include <string>

namespace fedprog {

namespace {

// Newton iteration on P_n from Chebyshev-like initial guesses. Accurate to
// ~1e-15 for the orders used here (<= a few hundred).
GaussLegendre compute_rule(int n) {
  GaussLegendre rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  const int m = (n + 1) / 2;
  for (int i = 0; i < m; ++i) {
    double x = std::cos(M_PI * (i + 0.75) / (n + 0.5));
    double pp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0, p1 = 0.0;
      for (int j = 0; j < n; ++j) {
        const double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * j + 1.0) * x * p1 - j * p2) / (j + 1.0);
      }
      pp = n * (x * p0 - p1) / (x * x - 1.0);
      const double dx = p0 / pp;
      x -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    rule.nodes[i] = -x;
    rule.nodes[n - 1 - i] = x;
    const double w = 2.0 / ((1.0 - x * x) * pp * pp);
    rule.weights[i] = w;
    rule.weights[n - 1 - i] = w;
  }
  return rule;
}

}  // namespace

const GaussLegendre& gauss_legendre(int n) {
  if (n < 1) throw std::invalid_argument("gauss_legendre: order must be >= 1");
  static std::map<int, GaussLegendre> cache;
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, compute_rule(n)).first;
  return it->second;
}

double gl_integrate(const std::function<double(double)>& f, double a, double b,
                    int n) {
  const GaussLegendre& rule = gauss_legendre(n);
  const double c = 0.5 * (a + b);
  const double h = 0.5 * (b - a);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) sum += rule.weights[i] * f(c + h * rule.nodes[i]);
  return sum * h;
}

double gl_integrate_segmented(const std::function<double(double)>& f, double a,
                              double b, int segments, int n) {
  if (segments < 1) throw std::invalid_argument("segments must be >= 1");
  const double h = (b - a) / segments;
  double total = 0.0;
  for (int s = 0; s < segments; ++s) {
    total += gl_integrate(f, a + s * h, a + (s + 1) * h, n);
  }
  return total;
}

double gl_integrate_refined(const std::function<double(double)>& f, double a,
                            double b, double tol, int initial_segments,
                            int max_segments, int n) {
  double prev = gl_integrate_segmented(f, a, b, initial_segments, n);
  for (int segs = initial_segments * 2; segs <= max_segments; segs *= 2) {
    const double cur = gl_integrate_segmented(f, a, b, segs, n);
    const double scale = std::max({std::abs(cur), std::abs(prev), 1e-300});
    if (std::abs(cur - prev) <= tol * scale) return cur;
    prev = cur;
  }
  throw std::runtime_error(
      "quadrature failed to converge; residual estimate " +
      std::to_string(std::abs(prev)));
}

}  // namespace fedprog
