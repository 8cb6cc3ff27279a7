#include "fedprog/baselines.hpp"

#include "fedprog/num_format.hpp"

#include <json.hpp>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include <cmath>
#include <fstream>
#include <memory>
#include <stdexcept>

namespace fedprog {

using nlohmann::json;

namespace {

Eigen::MatrixXd quad_design(const Eigen::VectorXd& t) {
  Eigen::MatrixXd x(t.size(), 3);
  x.col(0).setOnes();
  x.col(1) = t;
  x.col(2) = t.array().square();
  return x;
}

double data_horizon(const FleetDataset& fleet) {
  double h = 0.0;
  for (const auto& site : fleet.sites)
    for (const auto& u : site.units) h = std::max(h, u.event_time);
  return h;
}

int covariate_dim(const FleetDataset& fleet) {
  int n = 0;
  for (const auto& site : fleet.sites)
    for (const auto& u : site.units)
      n = std::max(n, static_cast<int>(u.covariates.size()));
  return n;
}

std::vector<std::vector<Trajectory>> training_trajectories(
    const MGPState& state, const FleetDataset& training, double horizon) {
  std::vector<std::vector<Trajectory>> trajs;
  for (const auto& site : training.sites) {
    const auto& hypers = state.site_hypers.at(site.site_id);
    std::vector<Trajectory> row;
    for (std::size_t m = 0; m < site.units.size(); ++m)
      row.push_back(mgp_unit_trajectory(state, hypers[m], horizon));
    trajs.push_back(std::move(row));
  }
  return trajs;
}

FittedJointModel train_mgp_method(const FleetDataset& training,
                                  const TrainOptions& opts,
                                  const std::string& method) {
  FittedJointModel model;
  model.method = method;
  model.has_mgp = true;
  model.adapt = opts.adapt;
  model.horizon = opts.trajectory_horizon > 0.0
                      ? opts.trajectory_horizon
                      : 5.0 * data_horizon(training);

  MGPState init = init_state(training, opts.mgp_latent,
                             opts.inducing_per_latent);
  model.mgp = train_mgp_centralized(training, init, opts.fed,
                                    opts.fed.R1 * opts.fed.E1);

  auto trajs = training_trajectories(model.mgp, training, model.horizon);
  std::vector<SiteDataset> sites = training.sites;
  CoxParams init_cox = default_cox_init(sites, opts.baseline_kind,
                                        covariate_dim(training));
  model.cox = train_cox_centralized(sites, trajs, init_cox, opts.fed,
                                    opts.fed.R2 * opts.fed.E2);
  return model;
}

}  // namespace

Eigen::Vector3d lmm_unit_coefs(const LmmModel& model, const Eigen::VectorXd& t,
                               const Eigen::VectorXd& y) {
  if (t.size() == 0) return model.pop_mean;
  Eigen::MatrixXd x = quad_design(t);
  Eigen::MatrixXd gram =
      x * model.re_cov * x.transpose() +
      model.resid_var *
          Eigen::MatrixXd::Identity(t.size(), t.size());
  Eigen::VectorXd resid = y - x * model.pop_mean;
  Eigen::LLT<Eigen::MatrixXd> llt(gram);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("LMM conditioning matrix not positive definite");
  return model.pop_mean + model.re_cov * x.transpose() * llt.solve(resid);
}

Trajectory lmm_trajectory(const Eigen::Vector3d& coefs, double horizon) {
  return Trajectory::from_scalar(
      [coefs](double t) {
        return coefs[0] + coefs[1] * t + coefs[2] * t * t;
      },
      horizon);
}

Trajectory FittedJointModel::trajectory_for(const UnitRecord& partial,
                                            bool* fell_back) const {
  if (fell_back) *fell_back = false;
  if (has_mgp) {
    AdaptedUnit adapted = adapt_test_unit(partial, mgp, adapt);
    if (fell_back) *fell_back = adapted.fell_back;
    auto predictor =
        std::make_shared<ConditionedPredictor>(std::move(adapted.predictor));
    return Trajectory::from_batch(
        [predictor](const double* t, double* out, std::size_t n) {
          predictor->mean_batch(t, out, n);
        },
        horizon);
  }
  if (has_lmm) {
    Eigen::Vector3d coefs =
        lmm_unit_coefs(lmm, partial.timestamps, partial.signal);
    return lmm_trajectory(coefs, horizon);
  }
  throw std::runtime_error("model has no trajectory component");
}

FittedJointModel train_cen_joint(const FleetDataset& training,
                                 const TrainOptions& opts) {
  return train_mgp_method(training, opts, "cen");
}

FittedJointModel train_ind_joint(const SiteDataset& site,
                                 const TrainOptions& opts) {
  FleetDataset single;
  single.sites.push_back(site);
  return train_mgp_method(single, opts, "ind");
}

FittedJointModel train_lmm_joint(const SiteDataset& site,
                                 const TrainOptions& opts) {
  FittedJointModel model;
  model.method = "lmm";
  model.has_lmm = true;
  FleetDataset single;
  single.sites.push_back(site);
  model.horizon = opts.trajectory_horizon > 0.0
                      ? opts.trajectory_horizon
                      : 5.0 * data_horizon(single);

  // Stage 1: per-unit OLS for population moments.
  std::vector<Eigen::Vector3d> ols;
  std::vector<Eigen::Matrix3d> ols_cov;
  double resid_ss = 0.0;
  long resid_df = 0;
  LmmModel& lmm = model.lmm;
  for (const auto& u : site.units) {
    if (u.n_obs() < 3) continue;
    Eigen::MatrixXd x = quad_design(u.timestamps);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
    Eigen::Vector3d coef;
    Eigen::Matrix3d xtx_inv;
    if (qr.rank() < 3) {
      lmm.ridge_fallback = true;
      Eigen::Matrix3d xtx = x.transpose() * x;
      xtx.diagonal().array() += 1e-8 * xtx.trace();
      Eigen::LLT<Eigen::Matrix3d> llt(xtx);
      coef = llt.solve(x.transpose() * u.signal);
      xtx_inv = llt.solve(Eigen::Matrix3d::Identity());
    } else {
      coef = qr.solve(u.signal);
      Eigen::Matrix3d xtx = x.transpose() * x;
      xtx_inv = xtx.llt().solve(Eigen::Matrix3d::Identity());
    }
    const Eigen::VectorXd resid = u.signal - x * coef;
    if (u.n_obs() > 3) {
      resid_ss += resid.squaredNorm();
      resid_df += u.n_obs() - 3;
    }
    ols.push_back(coef);
    ols_cov.push_back(xtx_inv);
  }
  if (ols.empty())
    throw std::invalid_argument("LMM needs units with >= 3 observations");

  lmm.resid_var = resid_df > 0 ? std::max(1e-12, resid_ss / resid_df) : 1e-2;
  lmm.pop_mean.setZero();
  for (const auto& c : ols) lmm.pop_mean += c;
  lmm.pop_mean /= static_cast<double>(ols.size());

  Eigen::Matrix3d scatter = Eigen::Matrix3d::Zero();
  Eigen::Matrix3d mean_cov = Eigen::Matrix3d::Zero();
  for (std::size_t i = 0; i < ols.size(); ++i) {
    const Eigen::Vector3d d = ols[i] - lmm.pop_mean;
    scatter += d * d.transpose();
    mean_cov += ols_cov[i];
  }
  if (ols.size() > 1) scatter /= static_cast<double>(ols.size() - 1);
  mean_cov *= lmm.resid_var / static_cast<double>(ols.size());
  Eigen::Matrix3d re = scatter - mean_cov;
  // moment estimate floored to PSD
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(0.5 * (re + re.transpose()));
  Eigen::Vector3d ev = es.eigenvalues().cwiseMax(0.0);
  lmm.re_cov =
      es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();

  // Stage 2: empirical-Bayes curves feed the Cox fit.
  std::vector<Trajectory> trajs;
  for (const auto& u : site.units) {
    Eigen::Vector3d coef = lmm_unit_coefs(lmm, u.timestamps, u.signal);
    lmm.unit_coefs.push_back(coef);
    trajs.push_back(lmm_trajectory(coef, model.horizon));
  }
  std::vector<SiteDataset> sites{site};
  CoxParams init_cox = default_cox_init(sites, opts.baseline_kind,
                                        covariate_dim(single));
  model.cox =
      train_cox_centralized(sites, {trajs}, init_cox, opts.fed,
                            opts.fed.R2 * opts.fed.E2);
  return model;
}

FittedJointModel train_fed_joint(const FleetDataset& training,
                                 const TrainOptions& opts,
                                 Transport& transport,
                                 const std::string& round_log_dir) {
  FittedJointModel model;
  model.method = "fed";
  model.has_mgp = true;
  model.adapt = opts.adapt;
  model.horizon = opts.trajectory_horizon > 0.0
                      ? opts.trajectory_horizon
                      : 5.0 * data_horizon(training);
  JointRunResult run =
      run_fed_joint(training, opts.fed, opts.baseline_kind, transport,
                    model.horizon, round_log_dir);
  model.mgp = std::move(run.mgp);
  model.cox = run.cox;
  return model;
}

// --- Model file ---------------------------------------------------------------

namespace {

json cox_to_json(const CoxParams& cox) {
  json j;
  j["kind"] = cox.baseline.kind == BaselineHazard::Kind::Weibull
                  ? "weibull"
                  : "exponential";
  j["lambda"] = fmt17(cox.baseline.lambda);
  j["rho"] = fmt17(cox.baseline.rho);
  j["gamma"] = vec_to_json(cox.gamma);
  j["beta"] = fmt17(cox.beta);
  return j;
}

CoxParams cox_from_json(const json& j) {
  CoxParams cox;
  cox.baseline.kind = j.at("kind").get<std::string>() == "weibull"
                          ? BaselineHazard::Kind::Weibull
                          : BaselineHazard::Kind::Exponential;
  cox.baseline.lambda =
      std::strtod(j.at("lambda").get<std::string>().c_str(), nullptr);
  cox.baseline.rho =
      std::strtod(j.at("rho").get<std::string>().c_str(), nullptr);
  cox.gamma = vec_from_json(j.at("gamma"));
  cox.beta = std::strtod(j.at("beta").get<std::string>().c_str(), nullptr);
  return cox;
}

}  // namespace

void save_model(const FittedJointModel& model, const std::string& path) {
  json j;
  j["version"] = 1;
  j["kind"] = "joint-model";
  j["method"] = model.method;
  j["horizon"] = fmt17(model.horizon);
  j["cox"] = cox_to_json(model.cox);
  if (model.has_mgp) {
    const std::string tmp = path + ".mgp.json";
    save_mgp_checkpoint(model.mgp, tmp);
    std::ifstream in(tmp);
    j["mgp"] = json::parse(in);
    std::remove(tmp.c_str());
  }
  if (model.has_lmm) {
    json lj;
    lj["pop_mean"] = vec_to_json(model.lmm.pop_mean);
    lj["re_cov"] = mat_to_json(model.lmm.re_cov);
    lj["resid_var"] = fmt17(model.lmm.resid_var);
    lj["ridge_fallback"] = model.lmm.ridge_fallback;
    json coefs = json::array();
    for (const auto& c : model.lmm.unit_coefs) coefs.push_back(vec_to_json(c));
    lj["unit_coefs"] = std::move(coefs);
    j["lmm"] = std::move(lj);
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write model " + path);
  out << j.dump(1) << '\n';
}

FittedJointModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open model " + path);
  json j = json::parse(in);
  FittedJointModel model;
  model.method = j.at("method").get<std::string>();
  model.horizon =
      std::strtod(j.at("horizon").get<std::string>().c_str(), nullptr);
  model.cox = cox_from_json(j.at("cox"));
  if (j.contains("mgp")) {
    model.has_mgp = true;
    const std::string tmp = path + ".mgp.load.json";
    {
      std::ofstream out(tmp);
      out << j["mgp"].dump() << '\n';
    }
    model.mgp = load_mgp_checkpoint(tmp);
    std::remove(tmp.c_str());
  }
  if (j.contains("lmm")) {
    model.has_lmm = true;
    const json& lj = j["lmm"];
    Eigen::VectorXd pm = vec_from_json(lj.at("pop_mean"));
    model.lmm.pop_mean = Eigen::Vector3d(pm[0], pm[1], pm[2]);
    model.lmm.re_cov = mat_from_json(lj.at("re_cov"));
    model.lmm.resid_var =
        std::strtod(lj.at("resid_var").get<std::string>().c_str(), nullptr);
    model.lmm.ridge_fallback = lj.at("ridge_fallback").get<bool>();
    for (const auto& c : lj.at("unit_coefs")) {
      Eigen::VectorXd v = vec_from_json(c);
      model.lmm.unit_coefs.emplace_back(v[0], v[1], v[2]);
    }
  }
  return model;
}

}  // namespace fedprog
