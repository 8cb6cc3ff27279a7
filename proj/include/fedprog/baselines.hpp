#pragma once

#include "fedprog/coxph.hpp"
#include "fedprog/data.hpp"
#include "fedprog/federation.hpp"
#include "fedprog/mgp.hpp"

#include <Eigen/Core>

#include <string>

namespace fedprog {

/// Quadratic linear mixed model y = a0 + a1 t + a2 t^2: population mean,
/// random-effect covariance, residual variance and empirical-Bayes per-unit
/// coefficient posteriors.
struct LmmModel {
  Eigen::Vector3d pop_mean{0, 0, 0};
  Eigen::Matrix3d re_cov = Eigen::Matrix3d::Zero();
  double resid_var = 1.0;
  std::vector<Eigen::Vector3d> unit_coefs;  // training units
  bool ridge_fallback = false;
};

/// Empirical-Bayes coefficients for (possibly partial) unit data. Kernel form
/// coef = mu + D X' (X D X' + s2 I)^{-1} (y - X mu); valid for any PSD D,
/// including zero (shrinkage limit: the population curve).
Eigen::Vector3d lmm_unit_coefs(const LmmModel& model, const Eigen::VectorXd& t,
                               const Eigen::VectorXd& y);

Trajectory lmm_trajectory(const Eigen::Vector3d& coefs, double horizon);

struct TrainOptions {
  FedConfig fed;
  BaselineHazard::Kind baseline_kind = BaselineHazard::Kind::Weibull;
  double trajectory_horizon = 0.0;  // 0: derived from the data
  AdaptOptions adapt;
  int mgp_latent = 2;
  int inducing_per_latent = 16;
};

/// Any trained method exposes the same prediction surface: a trajectory for
/// a (partially observed) unit plus CoxParams, so the metric code is
/// method-agnostic.
struct FittedJointModel {
  std::string method;  // fed | cen | ind | lmm
  bool has_mgp = false;
  MGPState mgp;
  bool has_lmm = false;
  LmmModel lmm;
  CoxParams cox;
  double horizon = 0.0;
  AdaptOptions adapt;

  Trajectory trajectory_for(const UnitRecord& partial,
                            bool* fell_back = nullptr) const;
};

/// Pooled centralized training: same objectives as the federated path,
/// monolithic optimization.
FittedJointModel train_cen_joint(const FleetDataset& training,
                                 const TrainOptions& opts);

/// Single-site training (no federation machinery involved).
FittedJointModel train_ind_joint(const SiteDataset& site,
                                 const TrainOptions& opts);

/// Quadratic LMM + CoxPH on a single site.
FittedJointModel train_lmm_joint(const SiteDataset& site,
                                 const TrainOptions& opts);

/// Federated two-stage training over a transport.
FittedJointModel train_fed_joint(const FleetDataset& training,
                                 const TrainOptions& opts,
                                 Transport& transport,
                                 const std::string& round_log_dir = "");

void save_model(const FittedJointModel& model, const std::string& path);
FittedJointModel load_model(const std::string& path);

}  // namespace fedprog
