#include "fedprog/cp_kernel.hpp"

#include "fedprog/quadrature.hpp"
#include "fedprog/simd/vexp.hpp"

#include <cmath>
#include <stdexcept>

namespace fedprog {

namespace {
constexpr double kInvSqrt2Pi = 0.3989422804014326779399;

inline double gauss_density(double d, double width) {
  return kInvSqrt2Pi / width * std::exp(-0.5 * d * d / (width * width));
}
}  // namespace

double latent_cov(double z1, double z2, double ell) {
  const double d = z1 - z2;
  return std::exp(-0.5 * d * d / (ell * ell));
}

double cov_f_u(double t, double z, const SmoothingKernel& sk, double ell) {
  const double a = ell * ell + sk.width * sk.width;
  const double d = t - z;
  return sk.scale * std::sqrt(ell * ell / a) * std::exp(-0.5 * d * d / a);
}

double cov_f_f(double t1, double t2, const UnitSmoothing& sk1,
               const UnitSmoothing& sk2, const Eigen::VectorXd& ells) {
  if (static_cast<Eigen::Index>(sk1.size()) != ells.size() ||
      static_cast<Eigen::Index>(sk2.size()) != ells.size())
    throw std::invalid_argument("smoothing/latent count mismatch");
  const double d = t1 - t2;
  double sum = 0.0;
  for (Eigen::Index i = 0; i < ells.size(); ++i) {
    const double ell2 = ells[i] * ells[i];
    const double a = ell2 + sk1[i].width * sk1[i].width +
                     sk2[i].width * sk2[i].width;
    sum += sk1[i].scale * sk2[i].scale * std::sqrt(ell2 / a) *
           std::exp(-0.5 * d * d / a);
  }
  return sum;
}

double quadrature_oracle_cov_f_u(double t, double z, const SmoothingKernel& sk,
                                 double ell, double tol) {
  if (sk.scale == 0.0) return 0.0;
  const double v2 = sk.width * sk.width;
  const double l2 = ell * ell;
  // Integrand is the product of Gaussians centered at t (width v) and z
  // (width ell); integrate over the product-Gaussian support.
  const double c = (t * l2 + z * v2) / (v2 + l2);
  const double w = std::sqrt(v2 * l2 / (v2 + l2));
  auto f = [&](double tau) {
    return sk.scale * gauss_density(t - tau, sk.width) *
           latent_cov(z, tau, ell);
  };
  return gl_integrate_refined(f, c - 14.0 * w, c + 14.0 * w, tol, 4, 1024, 32);
}

double quadrature_oracle_cov_f_f(double t1, double t2, const UnitSmoothing& sk1,
                                 const UnitSmoothing& sk2,
                                 const Eigen::VectorXd& ells, double tol) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < ells.size(); ++i) {
    const double s1 = sk1[i].scale, v1 = sk1[i].width;
    const double s2 = sk2[i].scale, v2 = sk2[i].width;
    if (s1 == 0.0 || s2 == 0.0) continue;
    const double ell = ells[i];
    const double l2 = ell * ell;
    // Support bounds come from the Gaussian envelopes only; the values are
    // integrated numerically.
    const double inner_var = l2 + v2 * v2;
    const double wo = std::sqrt(v1 * v1 * inner_var / (v1 * v1 + inner_var));
    const double co = (t1 * inner_var + t2 * v1 * v1) / (v1 * v1 + inner_var);
    const double wi = std::sqrt(v2 * v2 * l2 / (v2 * v2 + l2));

    auto inner = [&](double tau) {
      const double ci = (t2 * l2 + tau * v2 * v2) / (v2 * v2 + l2);
      auto g = [&](double taup) {
        return s2 * gauss_density(t2 - taup, v2) * latent_cov(tau, taup, ell);
      };
      return gl_integrate_refined(g, ci - 14.0 * wi, ci + 14.0 * wi, tol, 4,
                                  1024, 32);
    };
    auto outer = [&](double tau) {
      return s1 * gauss_density(t1 - tau, v1) * inner(tau);
    };
    total += gl_integrate_refined(outer, co - 14.0 * wo, co + 14.0 * wo, tol,
                                  4, 1024, 32);
  }
  return total;
}

Eigen::MatrixXd build_kuu(const std::vector<Eigen::VectorXd>& z_per_latent,
                          const Eigen::VectorXd& ells) {
  if (static_cast<Eigen::Index>(z_per_latent.size()) != ells.size())
    throw std::invalid_argument("grid/latent count mismatch");
  Eigen::Index total = 0;
  for (const auto& z : z_per_latent) total += z.size();
  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(total, total);
  Eigen::Index off = 0;
  for (Eigen::Index i = 0; i < ells.size(); ++i) {
    const auto& z = z_per_latent[i];
    const Eigen::Index p = z.size();
    simd::gaussian_cross(z.data(), p, z.data(), p, 1.0,
                         0.5 / (ells[i] * ells[i]), K.data() + off * total + off,
                         total);
    off += p;
  }
  return K;
}

Eigen::MatrixXd build_kfu(const Eigen::VectorXd& t,
                          const std::vector<Eigen::VectorXd>& z_per_latent,
                          const UnitSmoothing& sk, const Eigen::VectorXd& ells) {
  Eigen::Index total = 0;
  for (const auto& z : z_per_latent) total += z.size();
  Eigen::MatrixXd K(t.size(), total);
  Eigen::Index off = 0;
  for (Eigen::Index i = 0; i < ells.size(); ++i) {
    const auto& z = z_per_latent[i];
    const double a = ells[i] * ells[i] + sk[i].width * sk[i].width;
    const double coef = sk[i].scale * std::sqrt(ells[i] * ells[i] / a);
    simd::gaussian_cross(t.data(), t.size(), z.data(), z.size(), coef,
                         0.5 / a, K.data() + off * t.size(), t.size());
    off += z.size();
  }
  return K;
}

Eigen::MatrixXd build_kff(const Eigen::VectorXd& t1, const Eigen::VectorXd& t2,
                          const UnitSmoothing& sk1, const UnitSmoothing& sk2,
                          const Eigen::VectorXd& ells) {
  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(t1.size(), t2.size());
  Eigen::MatrixXd block(t1.size(), t2.size());
  for (Eigen::Index i = 0; i < ells.size(); ++i) {
    const double l2 = ells[i] * ells[i];
    const double a = l2 + sk1[i].width * sk1[i].width +
                     sk2[i].width * sk2[i].width;
    const double coef = sk1[i].scale * sk2[i].scale * std::sqrt(l2 / a);
    simd::gaussian_cross(t1.data(), t1.size(), t2.data(), t2.size(), coef,
                         0.5 / a, block.data(), t1.size());
    K += block;
  }
  return K;
}

double kff_diag_value(const UnitSmoothing& sk, const Eigen::VectorXd& ells) {
  double sum = 0.0;
  for (Eigen::Index i = 0; i < ells.size(); ++i) {
    const double l2 = ells[i] * ells[i];
    const double b = l2 + 2.0 * sk[i].width * sk[i].width;
    sum += sk[i].scale * sk[i].scale * std::sqrt(l2 / b);
  }
  return sum;
}

JitteredChol jittered_llt(const Eigen::MatrixXd& sym) {
  const double mean_diag = sym.diagonal().mean();
  const double base = std::max(mean_diag, 1e-300);
  JitteredChol out;
  for (double level = 1e-8; level <= 1.001e-2; level *= 10.0) {
    const double jitter = level * base;
    Eigen::MatrixXd shifted = sym;
    shifted.diagonal().array() += jitter;
    out.llt.compute(shifted);
    if (out.llt.info() == Eigen::Success) {
      out.jitter = jitter;
      return out;
    }
  }
  throw std::runtime_error("Cholesky failed after maximum jitter");
}

}  // namespace fedprog
