#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fedprog/baselines.hpp"
#include "fedprog/synthgen.hpp"

#include <cmath>
#include <filesystem>
#include <random>

using namespace fedprog;

namespace {

SiteDataset quadratic_site(int n_units, int n_obs, double noise_sd,
                           std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  SiteDataset site;
  site.site_id = 1;
  for (int m = 0; m < n_units; ++m) {
    UnitRecord u;
    u.site_id = 1;
    u.unit_id = m;
    u.timestamps = Eigen::VectorXd::LinSpaced(n_obs, 1.0, n_obs);
    u.signal.resize(n_obs);
    const double a0 = 2.0 + 0.1 * n01(rng);
    const double a1 = 0.05 + 0.01 * n01(rng);
    const double a2 = 0.002 + 0.0004 * n01(rng);
    for (int l = 0; l < n_obs; ++l) {
      const double t = u.timestamps[l];
      u.signal[l] = a0 + a1 * t + a2 * t * t + noise_sd * n01(rng);
    }
    u.event_time = n_obs;
    u.event_indicator = 1;
    u.covariates = Eigen::VectorXd::Constant(1, m % 2);
    site.units.push_back(std::move(u));
  }
  return site;
}

TrainOptions quick_options() {
  TrainOptions opts;
  opts.baseline_kind = BaselineHazard::Kind::Weibull;
  opts.fed.optimizer = FedConfig::Optimizer::Adam;
  opts.fed.eta1 = 0.05;
  opts.fed.E1 = 2;
  opts.fed.R1 = 15;
  opts.fed.eta2 = 0.1;
  opts.fed.E2 = 2;
  opts.fed.R2 = 25;
  opts.mgp_latent = 1;
  opts.inducing_per_latent = 6;
  opts.adapt.iterations = 50;
  return opts;
}

}  // namespace

TEST_CASE("LMM recovers exact quadratics") {
  // noise-free quadratic data with known coefficients
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n01;
  SiteDataset site;
  site.site_id = 1;
  std::vector<Eigen::Vector3d> truth;
  for (int m = 0; m < 6; ++m) {
    Eigen::Vector3d c(2.0 + 0.1 * n01(rng), 0.05 + 0.01 * n01(rng),
                      0.002 + 0.0004 * n01(rng));
    truth.push_back(c);
    UnitRecord u;
    u.site_id = 1;
    u.unit_id = m;
    u.timestamps = Eigen::VectorXd::LinSpaced(20, 1.0, 20.0);
    u.signal = c[0] + (c[1] * u.timestamps.array()) +
               (c[2] * u.timestamps.array().square());
    u.event_time = 20.0;
    site.units.push_back(std::move(u));
  }
  TrainOptions opts = quick_options();
  FittedJointModel model = train_lmm_joint(site, opts);
  REQUIRE(model.has_lmm);
  for (std::size_t m = 0; m < site.units.size(); ++m)
    CHECK((model.lmm.unit_coefs[m] - truth[m]).cwiseAbs().maxCoeff() < 1e-8);
  CHECK_FALSE(model.lmm.ridge_fallback);
}

TEST_CASE("LMM shrinkage limit: zero random effects give the population curve") {
  SiteDataset site = quadratic_site(5, 15, 0.1, 4);
  TrainOptions opts = quick_options();
  FittedJointModel model = train_lmm_joint(site, opts);
  LmmModel lmm = model.lmm;
  lmm.re_cov.setZero();
  const auto& u = site.units[2];
  Eigen::Vector3d coef = lmm_unit_coefs(lmm, u.timestamps, u.signal);
  CHECK((coef - lmm.pop_mean).cwiseAbs().maxCoeff() < 1e-12);

  // no data also returns the population curve
  Eigen::Vector3d coef0 =
      lmm_unit_coefs(model.lmm, Eigen::VectorXd(), Eigen::VectorXd());
  CHECK((coef0 - model.lmm.pop_mean).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("Ind-Joint on the pooled data equals Cen-Joint on one site") {
  SiteDataset site = quadratic_site(4, 12, 0.2, 5);
  TrainOptions opts = quick_options();
  FittedJointModel ind = train_ind_joint(site, opts);
  FleetDataset single;
  single.sites.push_back(site);
  FittedJointModel cen = train_cen_joint(single, opts);
  // identical degenerate training problems share the code path
  CHECK(pack_global(ind.mgp) == pack_global(cen.mgp));
  CHECK(pack_cox(ind.cox) == pack_cox(cen.cox));
  CHECK(ind.method == "ind");
  CHECK(cen.method == "cen");
}

TEST_CASE("pooled Cox optimum beats single-site fits on pooled data") {
  SynthConfig scfg;
  scfg.n_sites = 2;
  scfg.units_per_site = 15;
  scfg.seed = 9;
  SynthFleet data = generate_fleet(scfg);

  // true trajectories so only the Cox stage matters
  std::vector<SiteDataset> sites = data.fleet.sites;
  std::vector<std::vector<Trajectory>> trajs;
  for (int s = 0; s < 2; ++s) {
    std::vector<Trajectory> row;
    for (int m = 0; m < 15; ++m)
      row.push_back(data.truth[s * 15 + m].trajectory(1e4));
    trajs.push_back(std::move(row));
  }

  FedConfig cfg;
  cfg.optimizer = FedConfig::Optimizer::Adam;
  cfg.eta2 = 0.1;
  CoxParams init = default_cox_init(sites, BaselineHazard::Kind::Weibull, 1);
  CoxParams pooled = train_cox_centralized(sites, trajs, init, cfg, 400);
  CoxParams only0 = train_cox_centralized({sites[0]}, {trajs[0]}, init, cfg,
                                          400);
  CoxParams only1 = train_cox_centralized({sites[1]}, {trajs[1]}, init, cfg,
                                          400);

  const double pooled_nll = neg_loglik(sites, trajs, pooled);
  CHECK(pooled_nll <= neg_loglik(sites, trajs, only0) + 1e-6);
  CHECK(pooled_nll <= neg_loglik(sites, trajs, only1) + 1e-6);
}

TEST_CASE("deterministic under a fixed configuration") {
  SiteDataset site = quadratic_site(4, 10, 0.2, 6);
  FleetDataset fleet;
  fleet.sites.push_back(site);
  TrainOptions opts = quick_options();
  FittedJointModel a = train_cen_joint(fleet, opts);
  FittedJointModel b = train_cen_joint(fleet, opts);
  CHECK(pack_global(a.mgp) == pack_global(b.mgp));
  CHECK(pack_cox(a.cox) == pack_cox(b.cox));
}

TEST_CASE("model file round-trips through JSON") {
  SiteDataset site = quadratic_site(3, 10, 0.2, 7);
  TrainOptions opts = quick_options();
  FittedJointModel lmm = train_lmm_joint(site, opts);
  save_model(lmm, "model_lmm_tmp.json");
  FittedJointModel back = load_model("model_lmm_tmp.json");
  CHECK(back.method == "lmm");
  CHECK(back.has_lmm);
  CHECK(back.lmm.pop_mean == lmm.lmm.pop_mean);
  CHECK(back.cox.beta == lmm.cox.beta);
  std::filesystem::remove("model_lmm_tmp.json");

  FleetDataset fleet;
  fleet.sites.push_back(site);
  FittedJointModel cen = train_cen_joint(fleet, opts);
  save_model(cen, "model_cen_tmp.json");
  FittedJointModel back2 = load_model("model_cen_tmp.json");
  CHECK(back2.has_mgp);
  CHECK(pack_global(back2.mgp) == pack_global(cen.mgp));
  CHECK(back2.cox.baseline.lambda == cen.cox.baseline.lambda);
  std::filesystem::remove("model_cen_tmp.json");
}

TEST_CASE("all methods expose the same prediction surface") {
  SynthConfig scfg;
  scfg.n_sites = 3;
  scfg.units_per_site = 6;
  scfg.seed = 12;
  SynthFleet data = generate_fleet(scfg);
  FleetDataset training;
  training.sites.assign(data.fleet.sites.begin() + 1,
                        data.fleet.sites.end());

  TrainOptions opts = quick_options();
  opts.mgp_latent = 2;
  opts.inducing_per_latent = 8;

  std::vector<FittedJointModel> models;
  models.push_back(train_cen_joint(training, opts));
  models.push_back(train_ind_joint(training.site(1), opts));
  models.push_back(train_lmm_joint(training.site(1), opts));
  {
    auto transport = make_loopback_transport();
    models.push_back(train_fed_joint(training, opts, *transport));
  }

  const UnitRecord& test_unit = data.fleet.site(0).units[0];
  TruncationResult trunc = truncate_at_fraction(test_unit, 0.5);
  for (const auto& model : models) {
    Trajectory traj = model.trajectory_for(trunc.partial);
    const double f = failure_probability(trunc.t_star, 12.0,
                                         test_unit.covariates, traj,
                                         model.cox);
    CHECK(f >= 0.0);
    CHECK(f <= 1.0);
    MeanRulResult r = mean_rul(trunc.t_star, test_unit.covariates, traj,
                               model.cox, 600.0);
    CHECK(std::isfinite(r.value));
    CHECK(r.value >= 0.0);
  }
}
