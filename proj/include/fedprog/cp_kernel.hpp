#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <vector>

namespace fedprog {

/// Smoothing kernel g(tau) = scale * N(tau; 0, width^2), one per
/// (unit, latent function).
struct SmoothingKernel {
  double scale = 1.0;  // s, unconstrained
  double width = 1.0;  // v > 0
};

/// Per-unit smoothing parameters, one entry per latent function.
using UnitSmoothing = std::vector<SmoothingKernel>;

// --- Closed forms -----------------------------------------------------------
// Latent GPs carry RBF kernels exp(-(z-z')^2 / (2 ell^2)). Convolving with the
// Gaussian smoothing kernels gives:
//   cov(f(t), u_i(z))   = s * sqrt(ell^2/(ell^2+v^2))
//                           * exp(-(t-z)^2 / (2 (ell^2+v^2)))
//   cov(f(t), f'(t'))   = sum_i s_i s'_i sqrt(ell_i^2/(ell_i^2+v_i^2+v'_i^2))
//                           * exp(-(t-t')^2 / (2 (ell_i^2+v_i^2+v'_i^2)))
// These follow from Gaussian convolution identities and are validated against
// the quadrature oracles below.

double latent_cov(double z1, double z2, double ell);
double cov_f_u(double t, double z, const SmoothingKernel& sk, double ell);
double cov_f_f(double t1, double t2, const UnitSmoothing& sk1,
               const UnitSmoothing& sk2, const Eigen::VectorXd& ells);

// --- Quadrature oracles -----------------------------------------------------
// Direct numerical evaluation of the defining convolution integrals,
// independent of the closed forms. Throws if the refinement fails to converge.

double quadrature_oracle_cov_f_u(double t, double z, const SmoothingKernel& sk,
                                 double ell, double tol = 1e-9);
double quadrature_oracle_cov_f_f(double t1, double t2, const UnitSmoothing& sk1,
                                 const UnitSmoothing& sk2,
                                 const Eigen::VectorXd& ells,
                                 double tol = 1e-9);

// --- Matrix assembly --------------------------------------------------------

/// K_uu over the inducing inputs: block diagonal across latent functions,
/// RBF within each block. No jitter added here.
Eigen::MatrixXd build_kuu(const std::vector<Eigen::VectorXd>& z_per_latent,
                          const Eigen::VectorXd& ells);

/// K_fu for one unit's inputs against all latents' inducing points
/// (columns ordered latent-by-latent).
Eigen::MatrixXd build_kfu(const Eigen::VectorXd& t,
                          const std::vector<Eigen::VectorXd>& z_per_latent,
                          const UnitSmoothing& sk, const Eigen::VectorXd& ells);

/// Full cross-covariance block between two input sets (same or different
/// units).
Eigen::MatrixXd build_kff(const Eigen::VectorXd& t1, const Eigen::VectorXd& t2,
                          const UnitSmoothing& sk1, const UnitSmoothing& sk2,
                          const Eigen::VectorXd& ells);

/// Zero-lag same-unit variance sum_i s_i^2 sqrt(ell_i^2/(ell_i^2+2 v_i^2)).
double kff_diag_value(const UnitSmoothing& sk, const Eigen::VectorXd& ells);

/// Cholesky with the PSD-repair jitter ladder: 1e-8 * mean(diag), escalating
/// x10 up to 1e-2 * mean(diag). Throws on failure at the final level.
struct JitteredChol {
  Eigen::LLT<Eigen::MatrixXd> llt;
  double jitter = 0.0;
};
JitteredChol jittered_llt(const Eigen::MatrixXd& sym);

}  // namespace fedprog
