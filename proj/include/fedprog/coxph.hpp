#pragma once

#include "fedprog/data.hpp"

#include <Eigen/Core>

#include <functional>
#include <string>
#include <vector>

namespace fedprog {

struct BaselineHazard {
  enum class Kind { Exponential, Weibull };
  Kind kind = Kind::Exponential;
  double lambda = 1.0;  // > 0
  double rho = 1.0;     // > 0, Weibull shape

  double value(double t) const;
  double log_value(double t) const;
};

struct CoxParams {
  BaselineHazard baseline;
  Eigen::VectorXd gamma;  // covariate coefficients (possibly empty)
  double beta = 0.0;      // trajectory coefficient
};

/// Fitted degradation curve t -> f(t) on [0, horizon]; batch-evaluable so
/// quadrature loops stay vectorized.
class Trajectory {
 public:
  Trajectory() = default;
  static Trajectory from_scalar(std::function<double(double)> f,
                                double horizon);
  static Trajectory from_batch(
      std::function<void(const double*, double*, std::size_t)> f,
      double horizon);

  double operator()(double t) const;
  void eval(const double* t, double* out, std::size_t n) const;
  double horizon() const { return horizon_; }
  bool valid() const { return static_cast<bool>(batch_); }

 private:
  std::function<void(const double*, double*, std::size_t)> batch_;
  double horizon_ = 0.0;
};

/// h(t) = h0(t) exp(gamma' w + beta f(t)).
double hazard(double t, const Eigen::VectorXd& w, const Trajectory& traj,
              const CoxParams& params);

/// Integral of the hazard over [a, b] by composite Gauss-Legendre with a
/// geometrically graded left end when the Weibull baseline is singular at 0.
double cumulative_hazard(double a, double b, const Eigen::VectorXd& w,
                         const Trajectory& traj, const CoxParams& params);

/// delta * log h(V) - integral_0^V h(u) du.
double unit_loglik(const UnitRecord& unit, const Trajectory& traj,
                   const CoxParams& params);

/// (1/M) * sum of negative unit log-likelihoods over all sites.
/// trajectories[k][m] pairs with sites[k].units[m].
double neg_loglik(const std::vector<SiteDataset>& sites,
                  const std::vector<std::vector<Trajectory>>& trajectories,
                  const CoxParams& params);

/// F(t* + dt | t*) = 1 - exp(-integral over [t*, t*+dt] of h).
double failure_probability(double t_star, double dt, const Eigen::VectorXd& w,
                           const Trajectory& traj, const CoxParams& params);

struct MeanRulResult {
  double value = 0.0;
  double tail_survival = 0.0;  // S(T_max | t*)
  bool tail_flagged = false;   // tail above tolerance at the horizon
};

/// Mean remaining life at t*: integral over [t*, T_max] of S(u | t*),
/// truncation tail reported. Requires t_max > t_star.
MeanRulResult mean_rul(double t_star, const Eigen::VectorXd& w,
                       const Trajectory& traj, const CoxParams& params,
                       double t_max, double tail_tol = 1e-6);

/// Per-unit survival-curve export: rows `t,S(t|t*),F(t|t*)`.
void write_survival_csv(const std::string& path, double t_star,
                        const Eigen::VectorXd& grid, const Eigen::VectorXd& w,
                        const Trajectory& traj, const CoxParams& params);

// --- Training support ---------------------------------------------------------
// Quadrature nodes and trajectory values over [0, V] are fixed per unit, so
// they are cached once and reused across optimizer iterations.

struct CoxUnitCache {
  double V = 0.0;
  int delta = 1;
  Eigen::VectorXd w;
  Eigen::VectorXd nodes;      // quadrature nodes in (0, V)
  Eigen::VectorXd weights;    // matching weights (jacobians folded in)
  Eigen::VectorXd f_nodes;    // trajectory at the nodes
  Eigen::VectorXd log_nodes;  // log of the nodes
  double f_at_V = 0.0;
};

std::vector<CoxUnitCache> build_cox_cache(
    const SiteDataset& site, const std::vector<Trajectory>& trajectories);

/// Packed layout: [log lambda] ([log rho] when Weibull) [gamma...] [beta].
struct CoxParamLayout {
  bool weibull = false;
  int n_cov = 0;
  Eigen::Index size() const { return (weibull ? 2 : 1) + n_cov + 1; }
};
CoxParamLayout layout_of(const CoxParams& params);
Eigen::VectorXd pack_cox(const CoxParams& params);
CoxParams unpack_cox(const Eigen::VectorXd& packed,
                     const CoxParamLayout& layout);

/// Mean negative log-likelihood over the cached units (the site objective in
/// the federated stage); gradient in the packed layout.
double site_cox_objective(const std::vector<CoxUnitCache>& cache,
                          const CoxParams& params, bool with_grad,
                          Eigen::VectorXd* grad);

}  // namespace fedprog
