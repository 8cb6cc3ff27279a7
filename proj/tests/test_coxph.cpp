#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fedprog/coxph.hpp"

#include <cmath>
#include <random>

using namespace fedprog;

namespace {

Trajectory zero_traj(double horizon = 1e6) {
  return Trajectory::from_scalar([](double) { return 0.0; }, horizon);
}

CoxParams exponential_params(double lambda) {
  CoxParams p;
  p.baseline.kind = BaselineHazard::Kind::Exponential;
  p.baseline.lambda = lambda;
  p.beta = 0.0;
  return p;
}

CoxParams weibull_params(double lambda, double rho) {
  CoxParams p;
  p.baseline.kind = BaselineHazard::Kind::Weibull;
  p.baseline.lambda = lambda;
  p.baseline.rho = rho;
  p.beta = 0.0;
  return p;
}

UnitRecord event_unit(double v, int delta,
                      const Eigen::VectorXd& w = Eigen::VectorXd()) {
  UnitRecord u;
  u.event_time = v;
  u.event_indicator = delta;
  u.covariates = w;
  u.timestamps = Eigen::VectorXd::Constant(1, std::min(1.0, v));
  u.signal = Eigen::VectorXd::Zero(1);
  return u;
}

}  // namespace

TEST_CASE("hazard values") {
  Eigen::VectorXd w;
  // Weibull baseline at t = 100
  CHECK(hazard(100.0, w, zero_traj(), weibull_params(0.001, 1.05)) ==
        doctest::Approx(1.3218e-3).epsilon(1e-4));
  CHECK(hazard(100.0, w, zero_traj(), weibull_params(0.001, 1.05)) ==
        doctest::Approx(0.001 * 1.05 * std::pow(100.0, 0.05)).epsilon(1e-12));

  // exponential baseline is flat
  for (double t : {0.0, 1.0, 57.0, 300.0})
    CHECK(hazard(t, w, zero_traj(), exponential_params(0.37)) ==
          doctest::Approx(0.37));

  // beta * f(t) = 1 multiplies by e
  CoxParams p = exponential_params(0.2);
  p.beta = 0.5;
  Trajectory two = Trajectory::from_scalar([](double) { return 2.0; }, 1e6);
  CHECK(hazard(5.0, w, two, p) == doctest::Approx(0.2 * std::exp(1.0)));
}

TEST_CASE("cumulative hazard") {
  Eigen::VectorXd w;
  CHECK(cumulative_hazard(3.0, 3.0, w, zero_traj(),
                          exponential_params(0.5)) == 0.0);
  CHECK(cumulative_hazard(0.0, 100.0, w, zero_traj(),
                          exponential_params(0.001)) ==
        doctest::Approx(0.1).epsilon(1e-12));
  // Weibull analytic antiderivative lambda * t^rho
  const double expect = 0.001 * std::pow(100.0, 1.05);
  CHECK(cumulative_hazard(0.0, 100.0, w, zero_traj(),
                          weibull_params(0.001, 1.05)) ==
        doctest::Approx(expect).epsilon(1e-8));
  CHECK(expect == doctest::Approx(0.12589).epsilon(1e-4));

  // additive over adjacent intervals
  const double a = cumulative_hazard(0.0, 40.0, w, zero_traj(),
                                     weibull_params(0.002, 1.3));
  const double b = cumulative_hazard(40.0, 90.0, w, zero_traj(),
                                     weibull_params(0.002, 1.3));
  const double ab = cumulative_hazard(0.0, 90.0, w, zero_traj(),
                                      weibull_params(0.002, 1.3));
  CHECK(a + b == doctest::Approx(ab).epsilon(1e-10));
}

TEST_CASE("unit log-likelihood closed forms") {
  UnitRecord failed = event_unit(100.0, 1);
  CHECK(unit_loglik(failed, zero_traj(), exponential_params(0.01)) ==
        doctest::Approx(std::log(0.01) - 1.0).epsilon(1e-12));
  CHECK(unit_loglik(failed, zero_traj(), exponential_params(0.01)) ==
        doctest::Approx(-5.605170).epsilon(1e-6));

  UnitRecord censored = event_unit(100.0, 0);
  CHECK(unit_loglik(censored, zero_traj(), exponential_params(0.01)) ==
        doctest::Approx(-1.0).epsilon(1e-12));

  // Weibull vs closed-form cumulative hazard
  const CoxParams wb = weibull_params(0.004, 1.4);
  UnitRecord u = event_unit(57.0, 1);
  const double expect = std::log(0.004 * 1.4 * std::pow(57.0, 0.4)) -
                        0.004 * std::pow(57.0, 1.4);
  CHECK(unit_loglik(u, zero_traj(), wb) ==
        doctest::Approx(expect).epsilon(1e-8));
}

TEST_CASE("scaled negative log-likelihood") {
  const CoxParams p = exponential_params(0.01);
  SiteDataset site;
  site.site_id = 0;
  site.units.push_back(event_unit(100.0, 1));
  std::vector<std::vector<Trajectory>> tr{{zero_traj()}};
  CHECK(neg_loglik({site}, tr, p) ==
        doctest::Approx(-(std::log(0.01) - 1.0)).epsilon(1e-12));

  // duplicating every unit leaves the 1/M-scaled value unchanged
  SiteDataset doubled = site;
  doubled.units.push_back(site.units[0]);
  std::vector<std::vector<Trajectory>> tr2{{zero_traj(), zero_traj()}};
  CHECK(neg_loglik({doubled}, tr2, p) ==
        doctest::Approx(neg_loglik({site}, tr, p)).epsilon(1e-12));

  // two-site split equals the monolithic evaluation
  SiteDataset s1, s2;
  s1.site_id = 1;
  s2.site_id = 2;
  s1.units.push_back(event_unit(60.0, 1));
  s1.units.push_back(event_unit(80.0, 0));
  s2.units.push_back(event_unit(40.0, 1));
  SiteDataset merged;
  merged.units = s1.units;
  merged.units.push_back(s2.units[0]);
  std::vector<std::vector<Trajectory>> tr_split{{zero_traj(), zero_traj()},
                                                {zero_traj()}};
  std::vector<std::vector<Trajectory>> tr_merged{
      {zero_traj(), zero_traj(), zero_traj()}};
  CHECK(neg_loglik({s1, s2}, tr_split, p) ==
        doctest::Approx(neg_loglik({merged}, tr_merged, p)).epsilon(1e-12));
}

TEST_CASE("failure probability") {
  Eigen::VectorXd w;
  const CoxParams p = exponential_params(0.001);
  CHECK(failure_probability(50.0, 0.0, w, zero_traj(), p) == 0.0);
  CHECK(failure_probability(7.0, 100.0, w, zero_traj(), p) ==
        doctest::Approx(1.0 - std::exp(-0.1)).epsilon(1e-10));
  CHECK(failure_probability(7.0, 100.0, w, zero_traj(), p) ==
        doctest::Approx(0.095163).epsilon(1e-5));

  // Weibull tail reaches one
  const CoxParams wb = weibull_params(0.001, 1.05);
  CHECK(failure_probability(0.0, 1e4, w, zero_traj(), wb) ==
        doctest::Approx(1.0).epsilon(1e-6));

  // definitional identity against the cumulative hazard
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> ul(1e-4, 5e-3);
  std::uniform_real_distribution<double> ur(0.8, 1.6);
  std::uniform_real_distribution<double> ut(0.0, 80.0);
  for (int trial = 0; trial < 100; ++trial) {
    CoxParams q = weibull_params(ul(rng), ur(rng));
    q.beta = 0.02;
    Trajectory lin = Trajectory::from_scalar(
        [](double t) { return 0.05 * t; }, 1e6);
    const double ts = ut(rng), dt = ut(rng);
    const double f = failure_probability(ts, dt, w, lin, q);
    const double lam = cumulative_hazard(ts, ts + dt, w, lin, q);
    CHECK(std::abs((1.0 - f) - std::exp(-lam)) <= 1e-12);
  }

  // monotone in dt
  for (int trial = 0; trial < 200; ++trial) {
    CoxParams q = weibull_params(ul(rng), ur(rng));
    q.beta = 0.03;
    Trajectory lin = Trajectory::from_scalar(
        [](double t) { return 0.02 * t; }, 1e6);
    const double ts = ut(rng);
    double d1 = ut(rng), d2 = ut(rng);
    if (d1 > d2) std::swap(d1, d2);
    CHECK(failure_probability(ts, d1, w, lin, q) <=
          failure_probability(ts, d2, w, lin, q) + 1e-12);
  }
}

TEST_CASE("mean RUL") {
  Eigen::VectorXd w;
  // memoryless: 1/lambda regardless of t*
  const CoxParams p = exponential_params(0.02);
  MeanRulResult r = mean_rul(3.0, w, zero_traj(), p, 3.0 + 2500.0);
  CHECK(r.value == doctest::Approx(1.0 / 0.02).epsilon(1e-9));
  CHECK_FALSE(r.tail_flagged);

  // short horizon flags the truncation tail
  MeanRulResult rt = mean_rul(3.0, w, zero_traj(), p, 13.0);
  CHECK(rt.tail_flagged);
  CHECK(rt.tail_survival == doctest::Approx(std::exp(-0.02 * 10.0)).epsilon(1e-8));

  // a larger beta on a rising trajectory shortens the expected life
  Trajectory rising = Trajectory::from_scalar(
      [](double t) { return 0.05 * t; }, 1e6);
  CoxParams lo = exponential_params(0.001);
  lo.beta = 0.05;
  CoxParams hi = lo;
  hi.beta = 0.12;
  const double m_lo = mean_rul(10.0, w, rising, lo, 4000.0).value;
  const double m_hi = mean_rul(10.0, w, rising, hi, 4000.0).value;
  CHECK(m_hi < m_lo);

  // grid consistency: S(t | t*) from the export matches 1 - F
  const double ts = 5.0;
  Eigen::VectorXd grid = Eigen::VectorXd::LinSpaced(8, ts, ts + 70.0);
  for (Eigen::Index i = 0; i < grid.size(); ++i) {
    const double f = failure_probability(ts, grid[i] - ts, w, rising, lo);
    const double lam = cumulative_hazard(ts, grid[i], w, rising, lo);
    CHECK(1.0 - f == doctest::Approx(std::exp(-lam)).epsilon(1e-12));
  }

  CHECK_THROWS_AS(mean_rul(10.0, w, zero_traj(), p, 10.0),
                  std::invalid_argument);
}

TEST_CASE("gradient of the packed objective matches finite differences") {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> n01;
  std::uniform_real_distribution<double> uv(20.0, 120.0);

  SiteDataset site;
  site.site_id = 0;
  std::vector<Trajectory> trajs;
  for (int m = 0; m < 8; ++m) {
    Eigen::VectorXd w = Eigen::VectorXd::Constant(1, m % 2);
    UnitRecord u = event_unit(uv(rng), m % 3 == 0 ? 0 : 1, w);
    site.units.push_back(u);
    const double a = 0.02 + 0.01 * n01(rng);
    trajs.push_back(Trajectory::from_scalar(
        [a](double t) { return a * t; }, 1e6));
  }
  auto cache = build_cox_cache(site, trajs);

  CoxParams params = weibull_params(0.002, 1.2);
  params.gamma = Eigen::VectorXd::Constant(1, 0.15);
  params.beta = 0.4;
  const CoxParamLayout layout = layout_of(params);
  Eigen::VectorXd x0 = pack_cox(params);

  Eigen::VectorXd grad;
  site_cox_objective(cache, params, true, &grad);
  for (Eigen::Index i = 0; i < x0.size(); ++i) {
    const double h = 1e-5 * std::max(1e-2, std::abs(x0[i]));
    auto eval_at = [&](double delta) {
      Eigen::VectorXd x = x0;
      x[i] += delta;
      return site_cox_objective(cache, unpack_cox(x, layout), false, nullptr);
    };
    const double fd = (eval_at(h) - eval_at(-h)) / (2.0 * h);
    const double scale = std::max({std::abs(grad[i]), std::abs(fd), 1e-6});
    CHECK(std::abs(grad[i] - fd) <= 1e-4 * scale);
  }

  // cached objective agrees with the direct evaluation
  const double direct = neg_loglik({site}, {trajs}, params);
  const double cached = site_cox_objective(cache, params, false, nullptr);
  CHECK(cached == doctest::Approx(direct).epsilon(1e-9));
}
