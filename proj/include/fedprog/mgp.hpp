#pragma once

#include "fedprog/cp_kernel.hpp"
#include "fedprog/data.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <map>
#include <string>
#include <vector>

namespace fedprog {

/// Shared inducing inputs, one strictly increasing vector per latent
/// function. Fixed after initialization and shared verbatim by all sites.
struct InducingGrid {
  std::vector<Eigen::VectorXd> z;

  Eigen::Index total() const;
  std::vector<Eigen::Index> offsets() const;  // block start per latent
  int n_latent() const { return static_cast<int>(z.size()); }
};

/// q(u) = N(mu, psi); psi is block-diagonal across latent functions.
struct VariationalState {
  Eigen::VectorXd mu;
  Eigen::MatrixXd psi;
};

/// Per-unit hyperparameters: smoothing kernel per latent plus noise sd.
struct UnitHyper {
  UnitSmoothing smoothing;
  double sigma = 1.0;
};

/// Global parameters (latent lengthscales, inducing grid, variational state)
/// plus the per-site unit hyperparameters.
struct MGPState {
  Eigen::VectorXd ell;  // latent RBF lengthscales, length I
  InducingGrid grid;
  VariationalState vs;
  std::map<int, std::vector<UnitHyper>> site_hypers;

  int n_latent() const { return static_cast<int>(ell.size()); }
};

/// Scale-aware default initialization over the training fleet.
MGPState init_state(const FleetDataset& training, int n_latent = 2,
                    int per_latent = 16);

// --- Shared per-evaluation context ------------------------------------------

/// Jittered K_uu factorization plus derived quantities reused across units.
struct GlobalContext {
  Eigen::MatrixXd kuu;  // includes jitter on the diagonal
  Eigen::LLT<Eigen::MatrixXd> llt;
  double jitter = 0.0;
  Eigen::VectorXd a;  // K_uu^{-1} mu
};
GlobalContext make_global_context(const MGPState& state);

// --- Spec operations ---------------------------------------------------------

struct GaussianBlock {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

/// p(f | u) at the unit's inputs: mean K_fu K_uu^{-1} u,
/// cov K_ff - K_fu K_uu^{-1} K_uf.
GaussianBlock conditional_f_given_u(const Eigen::VectorXd& t,
                                    const UnitHyper& hyper,
                                    const MGPState& state,
                                    const Eigen::VectorXd& u);

/// log N(y; 0, Omega + K_fu K_uu^{-1} K_uf + noise) over the stacked fleet.
/// Ignores the variational state. Dense assembly; guarded to small instances.
double marginal_loglik(const FleetDataset& fleet, const MGPState& state);

/// Marginal moments of q(f_{k,m}) at the unit's inputs: mean and per-point
/// variance (the only pieces the Gaussian expected log-likelihood needs).
struct QMoments {
  Eigen::VectorXd mean;
  Eigen::VectorXd var;
};
QMoments unit_q_moments(const Eigen::VectorXd& t, const UnitHyper& hyper,
                        const MGPState& state, const GlobalContext& ctx);

/// Closed form E_{q(f)}[log N(y; f, sigma^2 I)] given the q-moments.
double expected_loglik_given_moments(const Eigen::VectorXd& y,
                                     const Eigen::VectorXd& mean,
                                     const Eigen::VectorXd& var, double sigma);

double expected_loglik_term(const UnitRecord& unit, const UnitHyper& hyper,
                            const MGPState& state);

/// KL(q(u) || p(u)) summed over latent-function blocks.
double kl_q_p(const MGPState& state);

/// V_k = sum_m E_{q}[log p(y_m | f_m)] - r_k * KL.
double local_elbo(const SiteDataset& site, const std::vector<UnitHyper>& hypers,
                  const MGPState& state, double r_k);

/// Full ELBO = sum_m E - KL (equals the sum of local_elbo over any
/// partition when the r_k sum to one).
double elbo(const FleetDataset& fleet, const MGPState& state);

/// Predictive distribution at new inputs for a unit with the given
/// hyperparameters: mean K_*u K_uu^{-1} mu, variance
/// cov(f*,f*) + A (psi - K_uu) A^T, clamped to be nonnegative.
struct PredictResult {
  Eigen::VectorXd mean;
  Eigen::VectorXd var;
};
PredictResult predict_f(const UnitHyper& hyper, const MGPState& state,
                        const Eigen::VectorXd& t_star);

// --- Test-unit adaptation ----------------------------------------------------

/// Predictor that conditions on a unit's own observations via exact Gaussian
/// conditioning of (f*, f_obs) under q(u). With no observations it reduces to
/// predict_f.
class ConditionedPredictor {
 public:
  ConditionedPredictor() = default;
  ConditionedPredictor(const UnitHyper& hyper, const MGPState& state,
                       const Eigen::VectorXd& t_obs,
                       const Eigen::VectorXd& y_obs);

  PredictResult predict(const Eigen::VectorXd& t_query) const;
  double mean_at(double t) const;
  void mean_batch(const double* t, double* out, std::size_t n) const;

 private:
  UnitHyper hyper_;
  Eigen::VectorXd ell_;
  std::vector<Eigen::VectorXd> z_;
  Eigen::LLT<Eigen::MatrixXd> llt_kuu_;
  Eigen::MatrixXd psi_;
  Eigen::VectorXd a_;
  // conditioning pieces (empty when no observations)
  Eigen::VectorXd t_obs_;
  Eigen::MatrixXd zw_;  // psi W_o - K_uo
  Eigen::LLT<Eigen::MatrixXd> llt_oo_;
  Eigen::VectorXd resid_alpha_;
};

struct AdaptOptions {
  int iterations = 150;
  double learning_rate = 0.05;
  // A short partial window cannot identify the smoothing parameters; by
  // default only the noise level is refit and (s, v) stay at the cross-unit
  // averages, with personalization carried by the residual conditioning.
  bool fit_scales = false;
  bool fit_widths = false;
};

struct AdaptedUnit {
  UnitHyper hyper;
  bool fell_back = false;
  ConditionedPredictor predictor;
};

/// Fits (theta, sigma) for a partially observed unit by maximizing its
/// expected-log-likelihood term with the global parameters frozen, then
/// builds the residual-conditioned predictor. Optimizer divergence falls
/// back to the cross-unit average hyperparameters (flagged).
AdaptedUnit adapt_test_unit(const UnitRecord& partial, const MGPState& state,
                            const AdaptOptions& opts = {});

// --- Packed parameterization (shared by training and federation) -------------
// Global layout:  [log ell (I)] [mu (P)] [vech(psi block) per latent]
// Site layout:    per unit: [s (I)] [log v (I)] [log sigma]
// Off-diagonal psi entries are single parameters applied symmetrically.

Eigen::Index global_param_size(const MGPState& state);
Eigen::VectorXd pack_global(const MGPState& state);
void unpack_global(const Eigen::VectorXd& packed, MGPState* state);
Eigen::VectorXd pack_site_local(const std::vector<UnitHyper>& hypers);
void unpack_site_local(const Eigen::VectorXd& packed,
                       std::vector<UnitHyper>* hypers);

/// Per-observation site objective J_k = -(sum_m E_km)/L_k + KL/L_total and
/// its gradient in the packed layouts.
struct SiteObjectiveEval {
  double value = 0.0;
  Eigen::VectorXd grad_local;
  Eigen::VectorXd grad_global;
};
SiteObjectiveEval eval_site_objective(const SiteDataset& site,
                                      const std::vector<UnitHyper>& hypers,
                                      const MGPState& global_state,
                                      double total_obs, bool with_grad);

/// Optimal q(u) in closed form (single latent function only); diagnostic.
VariationalState solve_optimal_variational(const FleetDataset& fleet,
                                           const MGPState& state);

// --- Checkpoint file ---------------------------------------------------------
// Versioned JSON; every floating-point value serialized as a decimal string
// at 17 significant digits so checkpoints replay bit-exactly.

void save_mgp_checkpoint(const MGPState& state, const std::string& path);
MGPState load_mgp_checkpoint(const std::string& path);

}  // namespace fedprog
