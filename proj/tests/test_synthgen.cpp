#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fedprog/data.hpp"
#include "fedprog/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

using namespace fedprog;

TEST_CASE("coefficient draws") {
  SynthConfig cfg;

  // degenerate covariance returns the mean exactly
  SynthConfig zero = cfg;
  zero.sigma_b.setZero();
  std::mt19937_64 rng(1);
  Eigen::Vector3d b = gen_coeffs(zero, rng);
  CHECK(b[0] == doctest::Approx(2.5));
  CHECK(b[1] == doctest::Approx(0.01));
  CHECK(b[2] == doctest::Approx(0.01));

  // Monte Carlo mean within three standard errors
  std::mt19937_64 rng2(2);
  const int n = 100000;
  Eigen::Vector3d acc = Eigen::Vector3d::Zero();
  for (int i = 0; i < n; ++i) acc += gen_coeffs(cfg, rng2);
  acc /= n;
  for (int k = 0; k < 3; ++k) {
    const double se = std::sqrt(cfg.sigma_b(k, k) / n);
    CHECK(std::abs(acc[k] - cfg.mu_b[k]) < 3.0 * se + 1e-12);
  }

  // seeded reproducibility
  std::mt19937_64 ra(7), rb(7);
  Eigen::Vector3d x = gen_coeffs(cfg, ra), y = gen_coeffs(cfg, rb);
  CHECK(x == y);
}

TEST_CASE("true signal values") {
  Eigen::Vector3d b(2.5, 0.01, 0.01);
  CHECK(true_signal(1.0, b, Scenario::I, 0.0, 0.0) ==
        doctest::Approx(2.52).epsilon(1e-12));
  CHECK(true_signal(1.0, b, Scenario::II, 1.0, 0.2) ==
        doctest::Approx(2.52 + std::sin(0.2)).epsilon(1e-12));
  CHECK(true_signal(1.0, b, Scenario::II, 1.0, 0.2) ==
        doctest::Approx(2.718669).epsilon(1e-6));
  CHECK(true_signal(0.0, b, Scenario::I, 0.0, 0.0) ==
        doctest::Approx(2.5));
}

TEST_CASE("true failure CDF") {
  SynthConfig cfg;
  // Weibull-only override: gamma = 0, beta = 0
  cfg.true_cox.beta = 0.0;
  cfg.true_cox.gamma = Eigen::VectorXd::Zero(1);
  TrueModel tm;
  tm.b = cfg.mu_b;
  tm.scenario = Scenario::I;
  tm.covariate = Eigen::VectorXd::Zero(1);
  tm.cox = cfg.true_cox;
  tabulate_failure_cdf(cfg, &tm);

  CHECK(tm.failure_cdf(0.0) == 0.0);
  const double expect = 1.0 - std::exp(-0.001 * std::pow(100.0, 1.05));
  CHECK(tm.failure_cdf(100.0) == doctest::Approx(expect).epsilon(1e-7));
  CHECK(expect == doctest::Approx(0.118286).epsilon(1e-5));

  // nondecreasing along the grid
  for (Eigen::Index i = 1; i < tm.cdf_grid_f.size(); ++i)
    CHECK(tm.cdf_grid_f[i] >= tm.cdf_grid_f[i - 1]);
}

TEST_CASE("inverse-transform sampler") {
  SynthConfig cfg;
  cfg.true_cox.beta = 0.0;
  cfg.true_cox.gamma = Eigen::VectorXd::Zero(1);
  cfg.true_cox.baseline.kind = BaselineHazard::Kind::Exponential;
  cfg.true_cox.baseline.lambda = 0.01;
  cfg.grid_len = 500;
  cfg.cdf_grid_step = 0.25;

  TrueModel tm;
  tm.b = Eigen::Vector3d::Zero();
  tm.scenario = Scenario::I;
  tm.covariate = Eigen::VectorXd::Zero(1);
  tm.cox = cfg.true_cox;
  tabulate_failure_cdf(cfg, &tm);

  bool beyond = false;
  CHECK(sample_failure_time(tm, 0.0, &beyond) == 0.0);
  CHECK_FALSE(beyond);

  const double median = sample_failure_time(tm, 0.5, &beyond);
  CHECK(median == doctest::Approx(std::log(2.0) / 0.01).epsilon(1e-3));

  // draws beyond the tabulated grid are flagged for censoring
  sample_failure_time(tm, 0.9999, &beyond);
  CHECK(beyond);

  // empirical CDF over many draws stays within Kolmogorov distance 0.02
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const int n = 10000;
  std::vector<double> draws;
  draws.reserve(n);
  for (int i = 0; i < n; ++i) {
    bool b2 = false;
    const double v = sample_failure_time(tm, u01(rng), &b2);
    if (!b2) draws.push_back(v);
  }
  std::sort(draws.begin(), draws.end());
  double ks = 0.0;
  for (std::size_t i = 0; i < draws.size(); ++i) {
    const double f = 1.0 - std::exp(-0.01 * draws[i]);
    const double lo = static_cast<double>(i) / n;
    const double hi = static_cast<double>(i + 1) / n;
    ks = std::max({ks, std::abs(f - lo), std::abs(f - hi)});
  }
  CHECK(ks < 0.02);
}

TEST_CASE("fleet generation") {
  SynthConfig cfg;
  cfg.n_sites = 5;
  cfg.units_per_site = 20;  // M = 100
  cfg.scenario = Scenario::I;
  cfg.seed = 11;
  SynthFleet data = generate_fleet(cfg);

  int censored = 0;
  for (const auto& site : data.fleet.sites)
    for (const auto& u : site.units) censored += 1 - u.event_indicator;
  CHECK(censored == 5);  // exactly 5% of 100

  auto rep = validate(data.fleet);
  CHECK(rep.pass);

  // censored units keep the full grid
  for (const auto& site : data.fleet.sites)
    for (const auto& u : site.units)
      if (u.event_indicator == 0) {
        CHECK(u.event_time == 120.0);
        CHECK(u.n_obs() == 120);
      }

  // zero censor fraction keeps every unit a failure
  SynthConfig none = cfg;
  none.censor_fraction = 0.0;
  SynthFleet all_fail = generate_fleet(none);
  for (const auto& site : all_fail.fleet.sites)
    for (const auto& u : site.units) CHECK(u.event_indicator == 1);

  // determinism
  SynthFleet again = generate_fleet(cfg);
  CHECK(again.fleet.sites[2].units[7].signal ==
        data.fleet.sites[2].units[7].signal);
  CHECK(again.truth[13].sampled_failure_time ==
        data.truth[13].sampled_failure_time);
}

TEST_CASE("Scenario II with zero amplitude reproduces Scenario I exactly") {
  SynthConfig a;
  a.scenario = Scenario::I;
  a.n_sites = 2;
  a.units_per_site = 5;
  a.seed = 21;
  SynthConfig b = a;
  b.scenario = Scenario::II;
  b.sine_amp_lo = 0.0;
  b.sine_amp_hi = 0.0;

  SynthFleet fa = generate_fleet(a);
  SynthFleet fb = generate_fleet(b);
  for (std::size_t s = 0; s < fa.fleet.sites.size(); ++s)
    for (std::size_t m = 0; m < fa.fleet.sites[s].units.size(); ++m) {
      const auto& ua = fa.fleet.sites[s].units[m];
      const auto& ub = fb.fleet.sites[s].units[m];
      CHECK(ua.event_time == ub.event_time);
      CHECK(ua.signal == ub.signal);
    }
}

TEST_CASE("true hazard consistency with the survival module") {
  // failure_probability with the true trajectory matches conditional
  // probabilities derived from the tabulated unconditional CDF
  SynthConfig cfg;
  cfg.seed = 31;
  TrueModel tm;
  std::mt19937_64 rng(5);
  tm.b = gen_coeffs(cfg, rng);
  tm.scenario = Scenario::II;
  tm.c = 1.0;
  tm.d = 0.2;
  tm.covariate = Eigen::VectorXd::Constant(1, 1.0);
  tm.cox = cfg.true_cox;
  tabulate_failure_cdf(cfg, &tm);

  Trajectory traj = tm.trajectory(130.0);
  for (double ts : {10.0, 25.0, 40.0}) {
    for (double dt : {12.0, 18.0}) {
      const double direct =
          failure_probability(ts, dt, tm.covariate, traj, tm.cox);
      const double f0 = tm.failure_cdf(ts);
      const double f1 = tm.failure_cdf(ts + dt);
      const double conditional = (f1 - f0) / (1.0 - f0);
      CHECK(direct == doctest::Approx(conditional).epsilon(5e-4));
    }
  }
}

TEST_CASE("truth sidecar round-trip") {
  SynthConfig cfg;
  cfg.n_sites = 2;
  cfg.units_per_site = 4;
  cfg.seed = 41;
  SynthFleet data = generate_fleet(cfg);
  const std::string path = "truth_tmp.json";
  write_truth_sidecar(data, path);
  auto back = read_truth_sidecar(path, cfg);
  REQUIRE(back.size() == data.truth.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].b == data.truth[i].b);
    CHECK(back[i].sampled_failure_time ==
          data.truth[i].sampled_failure_time);
    CHECK(back[i].covariate == data.truth[i].covariate);
  }
  std::filesystem::remove(path);
}
