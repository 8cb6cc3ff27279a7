#pragma once

#include "fedprog/coxph.hpp"
#include "fedprog/data.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace fedprog {

enum class Scenario { I, II };

struct SynthConfig {
  int n_sites = 3;          // site 0 is the test site
  int units_per_site = 20;
  int grid_len = 120;       // timestamps 1..grid_len
  Eigen::Vector3d mu_b{2.5, 0.01, 0.01};
  Eigen::Matrix3d sigma_b = (Eigen::Matrix3d() <<
      2e-1, -4e-4, 7e-5,
      -4e-4, 3e-6, 1e-7,
      7e-5, 1e-7, 3e-6).finished();  // var(b2) read as 3e-6 (see README)
  Scenario scenario = Scenario::I;
  double sine_amp_lo = 0.99, sine_amp_hi = 1.01;   // c range
  double sine_freq_lo = 0.18, sine_freq_hi = 0.22; // d range
  double noise_var = 0.2;       // N(0, 0.2) read as variance
  double covariate_prob = 0.5;  // Bernoulli dummy covariate
  double censor_fraction = 0.05;
  CoxParams true_cox;           // Weibull(0.001, 1.05), gamma 0.2, beta 0.5
  double cdf_grid_step = 0.5;   // inverse-transform interpolation grid
  std::uint64_t seed = 1;

  SynthConfig() {
    true_cox.baseline.kind = BaselineHazard::Kind::Weibull;
    true_cox.baseline.lambda = 1e-3;
    true_cox.baseline.rho = 1.05;
    true_cox.gamma = Eigen::VectorXd::Constant(1, 0.2);
    true_cox.beta = 0.5;
  }
};

/// Ground truth for one unit: signal coefficients, sine term, covariate,
/// the sampled failure time, and the tabulated failure CDF.
struct TrueModel {
  int site_id = 0;
  int unit_id = 0;
  Eigen::Vector3d b{0, 0, 0};
  double c = 0.0;
  double d = 0.0;
  Scenario scenario = Scenario::I;
  Eigen::VectorXd covariate;
  CoxParams cox;
  double sampled_failure_time = 0.0;  // from step (iii), before censoring
  bool beyond_grid = false;           // u exceeded F(t_L | 0)
  Eigen::VectorXd cdf_grid_t;
  Eigen::VectorXd cdf_grid_f;

  double signal(double t) const;             // noiseless f(t)
  Trajectory trajectory(double horizon) const;
  double failure_cdf(double t) const;        // interpolated F(t | 0)
};

/// b ~ N(mu_b, Sigma_b).
Eigen::Vector3d gen_coeffs(const SynthConfig& cfg, std::mt19937_64& rng);

/// b0 + b1 t^1.2 + b2 t^1.7 (+ c sin(d t) under Scenario II).
double true_signal(double t, const Eigen::Vector3d& b, Scenario scenario,
                   double c, double d);

/// Tabulates F(t|0) on the configured grid for this unit's true hazard.
void tabulate_failure_cdf(const SynthConfig& cfg, TrueModel* unit);

/// Inverse-transform draw from the tabulated CDF. Draws beyond F(t_L|0)
/// flag the unit for censoring at t_L.
double sample_failure_time(const TrueModel& unit, double u,
                           bool* beyond_grid);

struct SynthFleet {
  FleetDataset fleet;
  std::vector<TrueModel> truth;  // fleet order: site-major, unit order
};

SynthFleet generate_fleet(const SynthConfig& cfg);

/// Truth sidecar: per-unit coefficients, covariate, sampled failure time and
/// CDF grid, for metric computation.
void write_truth_sidecar(const SynthFleet& data, const std::string& path);
std::vector<TrueModel> read_truth_sidecar(const std::string& path,
                                          const SynthConfig& cfg);

}  // namespace fedprog
