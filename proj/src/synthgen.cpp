#include "fedprog/synthgen.hpp"

#include "fedprog/num_format.hpp"

#include <json.hpp>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace fedprog {

using nlohmann::json;

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t unit_stream(std::uint64_t seed, int site, int unit,
                          std::uint64_t salt) {
  std::uint64_t h = splitmix64(seed ^ salt);
  h = splitmix64(h ^ (static_cast<std::uint64_t>(site) + 1));
  h = splitmix64(h ^ (static_cast<std::uint64_t>(unit) + 1));
  return h;
}

}  // namespace

double true_signal(double t, const Eigen::Vector3d& b, Scenario scenario,
                   double c, double d) {
  double f = b[0] + b[1] * std::pow(t, 1.2) + b[2] * std::pow(t, 1.7);
  if (scenario == Scenario::II) f += c * std::sin(d * t);
  return f;
}

double TrueModel::signal(double t) const {
  return true_signal(t, b, scenario, c, d);
}

Trajectory TrueModel::trajectory(double horizon) const {
  const Eigen::Vector3d bc = b;
  const double cc = c, dc = d;
  const Scenario sc = scenario;
  return Trajectory::from_scalar(
      [bc, cc, dc, sc](double t) { return true_signal(t, bc, sc, cc, dc); },
      horizon);
}

double TrueModel::failure_cdf(double t) const {
  const Eigen::Index n = cdf_grid_t.size();
  if (n == 0) throw std::runtime_error("failure CDF not tabulated");
  if (t <= cdf_grid_t[0]) return cdf_grid_f[0];
  if (t >= cdf_grid_t[n - 1]) return cdf_grid_f[n - 1];
  Eigen::Index lo = 0, hi = n - 1;
  while (hi - lo > 1) {
    const Eigen::Index mid = (lo + hi) / 2;
    if (cdf_grid_t[mid] <= t)
      lo = mid;
    else
      hi = mid;
  }
  const double w = (t - cdf_grid_t[lo]) / (cdf_grid_t[hi] - cdf_grid_t[lo]);
  return cdf_grid_f[lo] + w * (cdf_grid_f[hi] - cdf_grid_f[lo]);
}

Eigen::Vector3d gen_coeffs(const SynthConfig& cfg, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::Vector3d z;
  for (int i = 0; i < 3; ++i) z[i] = normal(rng);
  Eigen::LLT<Eigen::Matrix3d> llt(cfg.sigma_b);
  if (llt.info() == Eigen::Success) return cfg.mu_b + llt.matrixL() * z;
  // PSD fallback (e.g. the zero matrix): symmetric square root.
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cfg.sigma_b);
  Eigen::Vector3d ev = es.eigenvalues().cwiseMax(0.0);
  return cfg.mu_b + es.eigenvectors() * ev.cwiseSqrt().asDiagonal() *
                        es.eigenvectors().transpose() * z;
}

void tabulate_failure_cdf(const SynthConfig& cfg, TrueModel* unit) {
  const double t_end = static_cast<double>(cfg.grid_len);
  const int n = static_cast<int>(std::floor(t_end / cfg.cdf_grid_step)) + 1;
  unit->cdf_grid_t.resize(n);
  unit->cdf_grid_f.resize(n);
  Trajectory traj = unit->trajectory(t_end + 1.0);
  double lam = 0.0;
  unit->cdf_grid_t[0] = 0.0;
  unit->cdf_grid_f[0] = 0.0;
  for (int j = 1; j < n; ++j) {
    const double t0 = unit->cdf_grid_t[j - 1];
    const double t1 = std::min(t0 + cfg.cdf_grid_step, t_end);
    lam += cumulative_hazard(t0, t1, unit->covariate, traj, unit->cox);
    unit->cdf_grid_t[j] = t1;
    unit->cdf_grid_f[j] = 1.0 - std::exp(-lam);
  }
}

double sample_failure_time(const TrueModel& unit, double u,
                           bool* beyond_grid) {
  const Eigen::Index n = unit.cdf_grid_t.size();
  if (n == 0) throw std::runtime_error("failure CDF not tabulated");
  if (beyond_grid) *beyond_grid = false;
  if (u <= unit.cdf_grid_f[0]) return unit.cdf_grid_t[0];
  if (u > unit.cdf_grid_f[n - 1]) {
    if (beyond_grid) *beyond_grid = true;
    return unit.cdf_grid_t[n - 1];
  }
  Eigen::Index lo = 0, hi = n - 1;
  while (hi - lo > 1) {
    const Eigen::Index mid = (lo + hi) / 2;
    if (unit.cdf_grid_f[mid] < u)
      lo = mid;
    else
      hi = mid;
  }
  const double df = unit.cdf_grid_f[hi] - unit.cdf_grid_f[lo];
  if (df <= 0.0) return unit.cdf_grid_t[hi];
  const double w = (u - unit.cdf_grid_f[lo]) / df;
  return unit.cdf_grid_t[lo] + w * (unit.cdf_grid_t[hi] - unit.cdf_grid_t[lo]);
}

SynthFleet generate_fleet(const SynthConfig& cfg) {
  SynthFleet out;
  const double t_end = static_cast<double>(cfg.grid_len);

  // Pass 1: coefficients, covariates and sampled failure times.
  for (int s = 0; s < cfg.n_sites; ++s) {
    for (int m = 0; m < cfg.units_per_site; ++m) {
      std::mt19937_64 rng(unit_stream(cfg.seed, s, m, 0x5173ull));
      TrueModel tm;
      tm.site_id = s;
      tm.unit_id = m;
      tm.scenario = cfg.scenario;
      tm.cox = cfg.true_cox;
      tm.b = gen_coeffs(cfg, rng);
      std::uniform_real_distribution<double> uc(cfg.sine_amp_lo,
                                                cfg.sine_amp_hi);
      std::uniform_real_distribution<double> ud(cfg.sine_freq_lo,
                                                cfg.sine_freq_hi);
      // Both scenarios draw the sine parameters so that Scenario II with a
      // degenerate amplitude range reproduces Scenario I draw-for-draw.
      tm.c = uc(rng);
      tm.d = ud(rng);
      std::uniform_real_distribution<double> u01(0.0, 1.0);
      const double wdraw = u01(rng);
      tm.covariate =
          Eigen::VectorXd::Constant(1, wdraw < cfg.covariate_prob ? 1.0 : 0.0);
      tabulate_failure_cdf(cfg, &tm);
      const double u_fail = u01(rng);
      tm.sampled_failure_time =
          sample_failure_time(tm, u_fail, &tm.beyond_grid);
      out.truth.push_back(std::move(tm));
    }
  }

  // Censor selection: draws beyond the grid are forced; the remainder of the
  // quota is a seeded random pick.
  const int m_total = cfg.n_sites * cfg.units_per_site;
  const int quota =
      static_cast<int>(std::llround(cfg.censor_fraction * m_total));
  std::vector<int> censored(m_total, 0);
  std::vector<int> candidates;
  int forced = 0;
  for (int i = 0; i < m_total; ++i) {
    if (out.truth[i].beyond_grid) {
      censored[i] = 1;
      ++forced;
    } else {
      candidates.push_back(i);
    }
  }
  if (forced < quota) {
    std::mt19937_64 rng_c(splitmix64(cfg.seed ^ 0xCE5011ull));
    std::shuffle(candidates.begin(), candidates.end(), rng_c);
    for (int j = 0;
         j < quota - forced && j < static_cast<int>(candidates.size()); ++j)
      censored[candidates[j]] = 1;
  }

  // Pass 2: observed records.
  for (int s = 0; s < cfg.n_sites; ++s) {
    SiteDataset site;
    site.site_id = s;
    for (int m = 0; m < cfg.units_per_site; ++m) {
      const int idx = s * cfg.units_per_site + m;
      const TrueModel& tm = out.truth[idx];
      UnitRecord u;
      u.site_id = s;
      u.unit_id = m;
      u.covariates = tm.covariate;
      if (censored[idx]) {
        u.event_time = t_end;
        u.event_indicator = 0;
      } else {
        // Units failing before the first grid point keep one observation.
        u.event_time = std::max(tm.sampled_failure_time, 1.0);
        u.event_indicator = 1;
      }
      const int n_keep = std::min(cfg.grid_len,
                                  static_cast<int>(std::floor(u.event_time)));
      u.timestamps.resize(n_keep);
      u.signal.resize(n_keep);
      std::mt19937_64 rng_n(unit_stream(cfg.seed, s, m, 0x401cull));
      std::normal_distribution<double> noise(0.0, std::sqrt(cfg.noise_var));
      for (int j = 0; j < n_keep; ++j) {
        const double t = static_cast<double>(j + 1);
        u.timestamps[j] = t;
        u.signal[j] = tm.signal(t) + noise(rng_n);
      }
      site.units.push_back(std::move(u));
    }
    out.fleet.sites.push_back(std::move(site));
  }
  return out;
}

void write_truth_sidecar(const SynthFleet& data, const std::string& path) {
  json j;
  j["version"] = 1;
  j["units"] = json::array();
  for (const auto& tm : data.truth) {
    json u;
    u["site"] = tm.site_id;
    u["unit"] = tm.unit_id;
    u["b"] = json::array({fmt17(tm.b[0]), fmt17(tm.b[1]), fmt17(tm.b[2])});
    u["c"] = fmt17(tm.c);
    u["d"] = fmt17(tm.d);
    u["scenario"] = tm.scenario == Scenario::I ? "I" : "II";
    u["covariate"] = vec_to_json(tm.covariate);
    u["sampled_failure_time"] = fmt17(tm.sampled_failure_time);
    u["beyond_grid"] = tm.beyond_grid;
    j["units"].push_back(std::move(u));
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write truth sidecar " + path);
  out << j.dump(1) << '\n';
}

std::vector<TrueModel> read_truth_sidecar(const std::string& path,
                                          const SynthConfig& cfg) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open truth sidecar " + path);
  json j = json::parse(in);
  std::vector<TrueModel> out;
  for (const auto& u : j.at("units")) {
    TrueModel tm;
    tm.site_id = u.at("site").get<int>();
    tm.unit_id = u.at("unit").get<int>();
    Eigen::VectorXd b = vec_from_json(u.at("b"));
    tm.b = Eigen::Vector3d(b[0], b[1], b[2]);
    tm.c = std::strtod(u.at("c").get<std::string>().c_str(), nullptr);
    tm.d = std::strtod(u.at("d").get<std::string>().c_str(), nullptr);
    tm.scenario =
        u.at("scenario").get<std::string>() == "I" ? Scenario::I : Scenario::II;
    tm.covariate = vec_from_json(u.at("covariate"));
    tm.sampled_failure_time = std::strtod(
        u.at("sampled_failure_time").get<std::string>().c_str(), nullptr);
    tm.beyond_grid = u.at("beyond_grid").get<bool>();
    tm.cox = cfg.true_cox;
    tabulate_failure_cdf(cfg, &tm);
    out.push_back(std::move(tm));
  }
  return out;
}

}  // namespace fedprog
