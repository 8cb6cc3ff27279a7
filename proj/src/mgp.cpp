#include "fedprog/mgp.hpp"

#include "fedprog/num_format.hpp"
#include "fedprog/optim.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace fedprog {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;
}

Eigen::Index InducingGrid::total() const {
  Eigen::Index n = 0;
  for (const auto& zi : z) n += zi.size();
  return n;
}

std::vector<Eigen::Index> InducingGrid::offsets() const {
  std::vector<Eigen::Index> off;
  Eigen::Index cur = 0;
  for (const auto& zi : z) {
    off.push_back(cur);
    cur += zi.size();
  }
  return off;
}

MGPState init_state(const FleetDataset& training, int n_latent,
                    int per_latent) {
  double t_max = 0.0;
  for (const auto& site : training.sites)
    for (const auto& u : site.units)
      if (u.n_obs() > 0) t_max = std::max(t_max, u.timestamps[u.n_obs() - 1]);
  if (t_max <= 0.0) t_max = 1.0;

  MGPState state;
  state.ell.resize(n_latent);
  // Staggered lengthscales; identical initialization would keep the latent
  // functions exact clones under gradient descent.
  for (int i = 0; i < n_latent; ++i)
    state.ell[i] = (i % 2 == 0 ? 0.20 : 0.08) * t_max;

  state.grid.z.resize(n_latent);
  for (int i = 0; i < n_latent; ++i) {
    Eigen::VectorXd zi(per_latent);
    for (int p = 0; p < per_latent; ++p)
      zi[p] = t_max * static_cast<double>(p) / (per_latent - 1);
    state.grid.z[i] = zi;
  }

  const double v0 = 0.05 * t_max;
  for (const auto& site : training.sites) {
    std::vector<UnitHyper> hypers;
    for (const auto& u : site.units) {
      UnitHyper h;
      h.smoothing.assign(n_latent, SmoothingKernel{1.0, v0});
      double sig = 1.0;
      if (u.n_obs() >= 3) {
        Eigen::VectorXd d =
            u.signal.tail(u.n_obs() - 1) - u.signal.head(u.n_obs() - 1);
        const double sd =
            std::sqrt((d.array() - d.mean()).square().sum() /
                      std::max<Eigen::Index>(1, d.size() - 1));
        sig = std::max(1e-3, sd / std::sqrt(2.0));
      }
      h.sigma = sig;
      hypers.push_back(std::move(h));
    }
    state.site_hypers[site.site_id] = std::move(hypers);
  }

  const Eigen::Index p_total = state.grid.total();
  state.vs.mu = Eigen::VectorXd::Zero(p_total);
  JitteredChol jc = jittered_llt(build_kuu(state.grid.z, state.ell));
  Eigen::MatrixXd kuu = build_kuu(state.grid.z, state.ell);
  kuu.diagonal().array() += jc.jitter;
  state.vs.psi = kuu;
  return state;
}

GlobalContext make_global_context(const MGPState& state) {
  GlobalContext ctx;
  Eigen::MatrixXd kuu = build_kuu(state.grid.z, state.ell);
  JitteredChol jc = jittered_llt(kuu);
  ctx.jitter = jc.jitter;
  kuu.diagonal().array() += jc.jitter;
  ctx.kuu = std::move(kuu);
  ctx.llt = jc.llt;
  ctx.a = ctx.llt.solve(state.vs.mu);
  return ctx;
}

GaussianBlock conditional_f_given_u(const Eigen::VectorXd& t,
                                    const UnitHyper& hyper,
                                    const MGPState& state,
                                    const Eigen::VectorXd& u) {
  GlobalContext ctx = make_global_context(state);
  Eigen::MatrixXd kfu = build_kfu(t, state.grid.z, hyper.smoothing, state.ell);
  Eigen::MatrixXd w = ctx.llt.solve(kfu.transpose());
  GaussianBlock out;
  out.mean = kfu * ctx.llt.solve(u);
  out.cov = build_kff(t, t, hyper.smoothing, hyper.smoothing, state.ell) -
            kfu * w;
  return out;
}

QMoments unit_q_moments(const Eigen::VectorXd& t, const UnitHyper& hyper,
                        const MGPState& state, const GlobalContext& ctx) {
  Eigen::MatrixXd kfu = build_kfu(t, state.grid.z, hyper.smoothing, state.ell);
  Eigen::MatrixXd w = ctx.llt.solve(kfu.transpose());
  Eigen::MatrixXd y = state.vs.psi * w;
  QMoments out;
  out.mean = kfu * ctx.a;
  const double kffd = kff_diag_value(hyper.smoothing, state.ell);
  Eigen::VectorXd qv =
      (kfu.transpose().array() * w.array()).colwise().sum().transpose();
  Eigen::VectorXd pv = (w.array() * y.array()).colwise().sum().transpose();
  out.var = (kffd - qv.array() + pv.array()).matrix();
  return out;
}

double expected_loglik_given_moments(const Eigen::VectorXd& y,
                                     const Eigen::VectorXd& mean,
                                     const Eigen::VectorXd& var, double sigma) {
  const double s2 = sigma * sigma;
  const Eigen::Index n = y.size();
  const double quad = ((y - mean).array().square() + var.array()).sum();
  return -0.5 * n * (kLog2Pi + std::log(s2)) - quad / (2.0 * s2);
}

double expected_loglik_term(const UnitRecord& unit, const UnitHyper& hyper,
                            const MGPState& state) {
  GlobalContext ctx = make_global_context(state);
  QMoments qm = unit_q_moments(unit.timestamps, hyper, state, ctx);
  return expected_loglik_given_moments(unit.signal, qm.mean, qm.var,
                                       hyper.sigma);
}

namespace {

double psi_logdet_or_throw(const Eigen::MatrixXd& psi,
                           Eigen::LLT<Eigen::MatrixXd>* llt_out = nullptr) {
  Eigen::LLT<Eigen::MatrixXd> llt(psi);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("variational covariance not positive definite");
  const double ld =
      2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  if (llt_out) *llt_out = llt;
  return ld;
}

struct KlEval {
  double value = 0.0;
  Eigen::VectorXd d_mu;
  Eigen::MatrixXd d_psi;
  Eigen::MatrixXd g_uu;  // d KL / d K_uu entries
};

KlEval eval_kl(const MGPState& state, const GlobalContext& ctx,
               bool with_grad) {
  const Eigen::Index p = state.grid.total();
  Eigen::MatrixXd kinv =
      ctx.llt.solve(Eigen::MatrixXd::Identity(p, p));
  const double logdet_k =
      2.0 * ctx.llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  Eigen::LLT<Eigen::MatrixXd> llt_psi;
  const double logdet_psi = psi_logdet_or_throw(state.vs.psi, &llt_psi);

  KlEval out;
  const double trace = (kinv.array() * state.vs.psi.array()).sum();
  out.value = 0.5 * (trace + state.vs.mu.dot(ctx.a) - static_cast<double>(p) +
                     logdet_k - logdet_psi);
  if (with_grad) {
    Eigen::MatrixXd psi_inv =
        llt_psi.solve(Eigen::MatrixXd::Identity(p, p));
    out.d_mu = ctx.a;
    out.d_psi = 0.5 * (kinv - psi_inv);
    out.g_uu = 0.5 * (kinv - kinv * state.vs.psi * kinv -
                      ctx.a * ctx.a.transpose());
  }
  return out;
}

}  // namespace

double kl_q_p(const MGPState& state) {
  GlobalContext ctx = make_global_context(state);
  return eval_kl(state, ctx, false).value;
}

double local_elbo(const SiteDataset& site, const std::vector<UnitHyper>& hypers,
                  const MGPState& state, double r_k) {
  if (hypers.size() != site.units.size())
    throw std::invalid_argument("hyperparameter/unit count mismatch");
  GlobalContext ctx = make_global_context(state);
  double e_sum = 0.0;
  for (std::size_t m = 0; m < site.units.size(); ++m) {
    QMoments qm =
        unit_q_moments(site.units[m].timestamps, hypers[m], state, ctx);
    e_sum += expected_loglik_given_moments(site.units[m].signal, qm.mean,
                                           qm.var, hypers[m].sigma);
  }
  return e_sum - r_k * eval_kl(state, ctx, false).value;
}

double elbo(const FleetDataset& fleet, const MGPState& state) {
  GlobalContext ctx = make_global_context(state);
  double e_sum = 0.0;
  for (const auto& site : fleet.sites) {
    const auto& hypers = state.site_hypers.at(site.site_id);
    for (std::size_t m = 0; m < site.units.size(); ++m) {
      QMoments qm =
          unit_q_moments(site.units[m].timestamps, hypers[m], state, ctx);
      e_sum += expected_loglik_given_moments(site.units[m].signal, qm.mean,
                                             qm.var, hypers[m].sigma);
    }
  }
  return e_sum - eval_kl(state, ctx, false).value;
}

double marginal_loglik(const FleetDataset& fleet, const MGPState& state) {
  const Eigen::Index L = fleet.total_obs();
  if (L > 4000)
    throw std::invalid_argument(
        "marginal_loglik: dense assembly limited to <= 4000 observations");
  GlobalContext ctx = make_global_context(state);

  Eigen::MatrixXd kfu_all(L, state.grid.total());
  Eigen::VectorXd y(L);
  Eigen::VectorXd noise(L);
  std::vector<std::pair<Eigen::Index, Eigen::Index>> blocks;  // offset, len
  Eigen::Index row = 0;
  for (const auto& site : fleet.sites) {
    const auto& hypers = state.site_hypers.at(site.site_id);
    for (std::size_t m = 0; m < site.units.size(); ++m) {
      const auto& u = site.units[m];
      const Eigen::Index n = u.n_obs();
      kfu_all.middleRows(row, n) =
          build_kfu(u.timestamps, state.grid.z, hypers[m].smoothing, state.ell);
      y.segment(row, n) = u.signal;
      noise.segment(row, n).setConstant(hypers[m].sigma * hypers[m].sigma);
      blocks.emplace_back(row, n);
      row += n;
    }
  }

  Eigen::MatrixXd w = ctx.llt.solve(kfu_all.transpose());
  Eigen::MatrixXd cov = kfu_all * w;  // Q_ff
  // Omega: per-unit conditional covariance blocks
  Eigen::Index bi = 0;
  for (const auto& site : fleet.sites) {
    const auto& hypers = state.site_hypers.at(site.site_id);
    for (std::size_t m = 0; m < site.units.size(); ++m, ++bi) {
      const auto& u = site.units[m];
      const auto [off, n] = blocks[bi];
      Eigen::MatrixXd kff = build_kff(u.timestamps, u.timestamps,
                                      hypers[m].smoothing, hypers[m].smoothing,
                                      state.ell);
      cov.block(off, off, n, n) += kff - kfu_all.middleRows(off, n) *
                                             w.middleCols(off, n);
    }
  }
  cov.diagonal() += noise;

  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("marginal covariance not positive definite");
  const double logdet =
      2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const double quad = y.dot(llt.solve(y));
  return -0.5 * (static_cast<double>(L) * kLog2Pi + logdet + quad);
}

PredictResult predict_f(const UnitHyper& hyper, const MGPState& state,
                        const Eigen::VectorXd& t_star) {
  GlobalContext ctx = make_global_context(state);
  QMoments qm = unit_q_moments(t_star, hyper, state, ctx);
  PredictResult out;
  out.mean = qm.mean;
  out.var = qm.var.cwiseMax(0.0);
  return out;
}

// --- Packed parameterization -------------------------------------------------

Eigen::Index global_param_size(const MGPState& state) {
  Eigen::Index n = state.ell.size() + state.grid.total();
  for (const auto& zi : state.grid.z) {
    const Eigen::Index p = zi.size();
    n += p * (p + 1) / 2;
  }
  return n;
}

Eigen::VectorXd pack_global(const MGPState& state) {
  Eigen::VectorXd out(global_param_size(state));
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < state.ell.size(); ++i)
    out[k++] = std::log(state.ell[i]);
  out.segment(k, state.vs.mu.size()) = state.vs.mu;
  k += state.vs.mu.size();
  const auto offs = state.grid.offsets();
  for (std::size_t i = 0; i < state.grid.z.size(); ++i) {
    const Eigen::Index p = state.grid.z[i].size();
    const Eigen::Index off = offs[i];
    for (Eigen::Index c = 0; c < p; ++c)
      for (Eigen::Index r = c; r < p; ++r)
        out[k++] = state.vs.psi(off + r, off + c);
  }
  return out;
}

void unpack_global(const Eigen::VectorXd& packed, MGPState* state) {
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < state->ell.size(); ++i)
    state->ell[i] = std::exp(packed[k++]);
  state->vs.mu = packed.segment(k, state->grid.total());
  k += state->grid.total();
  state->vs.psi =
      Eigen::MatrixXd::Zero(state->grid.total(), state->grid.total());
  const auto offs = state->grid.offsets();
  for (std::size_t i = 0; i < state->grid.z.size(); ++i) {
    const Eigen::Index p = state->grid.z[i].size();
    const Eigen::Index off = offs[i];
    for (Eigen::Index c = 0; c < p; ++c)
      for (Eigen::Index r = c; r < p; ++r) {
        state->vs.psi(off + r, off + c) = packed[k];
        state->vs.psi(off + c, off + r) = packed[k];
        ++k;
      }
  }
}

Eigen::VectorXd pack_site_local(const std::vector<UnitHyper>& hypers) {
  if (hypers.empty()) return {};
  const int n_latent = static_cast<int>(hypers[0].smoothing.size());
  Eigen::VectorXd out(static_cast<Eigen::Index>(hypers.size()) *
                      (2 * n_latent + 1));
  Eigen::Index k = 0;
  for (const auto& h : hypers) {
    for (int i = 0; i < n_latent; ++i) out[k++] = h.smoothing[i].scale;
    for (int i = 0; i < n_latent; ++i)
      out[k++] = std::log(h.smoothing[i].width);
    out[k++] = std::log(h.sigma);
  }
  return out;
}

void unpack_site_local(const Eigen::VectorXd& packed,
                       std::vector<UnitHyper>* hypers) {
  if (hypers->empty()) return;
  const int n_latent = static_cast<int>((*hypers)[0].smoothing.size());
  Eigen::Index k = 0;
  for (auto& h : *hypers) {
    for (int i = 0; i < n_latent; ++i) h.smoothing[i].scale = packed[k++];
    for (int i = 0; i < n_latent; ++i)
      h.smoothing[i].width = std::exp(packed[k++]);
    h.sigma = std::exp(packed[k++]);
  }
}

namespace {

// Accumulators for the global-parameter gradient of sum_m E_km.
struct GlobalAccum {
  Eigen::VectorXd d_mu;
  Eigen::MatrixXd d_psi;
  Eigen::MatrixXd g_uu;      // d/d K_uu entries
  Eigen::VectorXd d_log_ell; // direct K_fu / kff-diag parts

  void init(Eigen::Index p, Eigen::Index n_latent) {
    d_mu = Eigen::VectorXd::Zero(p);
    d_psi = Eigen::MatrixXd::Zero(p, p);
    g_uu = Eigen::MatrixXd::Zero(p, p);
    d_log_ell = Eigen::VectorXd::Zero(n_latent);
  }
};

struct UnitGradOut {
  Eigen::VectorXd d_scale;
  Eigen::VectorXd d_log_width;
  double d_log_sigma = 0.0;
};

// E_km and gradients for one unit. Accumulates global parts into `acc`.
double eval_unit(const Eigen::VectorXd& t, const Eigen::VectorXd& yobs,
                 const UnitHyper& hyper, const MGPState& state,
                 const GlobalContext& ctx, bool with_grad, GlobalAccum* acc,
                 UnitGradOut* ugrad) {
  const Eigen::Index n_latent = state.ell.size();
  const Eigen::Index L = t.size();
  const auto offs = state.grid.offsets();

  Eigen::MatrixXd kfu =
      build_kfu(t, state.grid.z, hyper.smoothing, state.ell);
  Eigen::MatrixXd w = ctx.llt.solve(kfu.transpose());      // P x L
  Eigen::MatrixXd yv = state.vs.psi * w;                   // P x L
  Eigen::VectorXd m = kfu * ctx.a;
  const double kffd = kff_diag_value(hyper.smoothing, state.ell);
  Eigen::VectorXd qv =
      (kfu.transpose().array() * w.array()).colwise().sum().transpose();
  Eigen::VectorXd pv = (w.array() * yv.array()).colwise().sum().transpose();
  Eigen::VectorXd svec = (kffd - qv.array() + pv.array()).matrix();

  const double sigma = hyper.sigma;
  const double s2 = sigma * sigma;
  const double e =
      expected_loglik_given_moments(yobs, m, svec, sigma);
  if (!with_grad) return e;

  const Eigen::VectorXd g = (yobs - m) / s2;
  const double h = -0.5 / s2;

  Eigen::MatrixXd u = ctx.llt.solve(yv);  // K^{-1} psi W, P x L

  acc->d_mu += w * g;
  acc->d_psi += h * (w * w.transpose());
  acc->g_uu += -(w * g) * ctx.a.transpose() + h * (w * w.transpose()) -
               h * (w * u.transpose() + u * w.transpose());

  Eigen::MatrixXd gfu = g * ctx.a.transpose() +
                        2.0 * h * (u - w).transpose();  // L x P

  ugrad->d_scale = Eigen::VectorXd::Zero(n_latent);
  ugrad->d_log_width = Eigen::VectorXd::Zero(n_latent);

  for (Eigen::Index i = 0; i < n_latent; ++i) {
    const Eigen::Index p = state.grid.z[i].size();
    const Eigen::Index off = offs[i];
    const double ell = state.ell[i];
    const double l2 = ell * ell;
    const double s = hyper.smoothing[i].scale;
    const double v = hyper.smoothing[i].width;
    const double v2 = v * v;
    const double a = l2 + v2;
    const double b = l2 + 2.0 * v2;
    const double kffdi = s * s * ell / std::sqrt(b);

    Eigen::MatrixXd diff = t * Eigen::RowVectorXd::Ones(p) -
                           Eigen::VectorXd::Ones(L) *
                               state.grid.z[i].transpose();
    Eigen::ArrayXXd d2 = diff.array().square();
    const auto kblk = kfu.middleCols(off, p).array();
    const auto gblk = gfu.middleCols(off, p).array();

    // d kfu / d s = kfu / s; computed scale-free to stay valid at s = 0.
    const double coef = std::sqrt(l2 / a);
    Eigen::ArrayXXd kappa = coef * (-d2 / (2.0 * a)).exp();
    ugrad->d_scale[i] =
        (gblk * kappa).sum() + h * static_cast<double>(L) *
                                   (2.0 * s * ell / std::sqrt(b));

    Eigen::ArrayXXd fac_v = (v2 / a) * (d2 / a - 1.0);
    ugrad->d_log_width[i] =
        (gblk * kblk * fac_v).sum() +
        h * static_cast<double>(L) * (-2.0 * v2 / b) * kffdi;

    Eigen::ArrayXXd fac_l = (1.0 - l2 / a) + d2 * (l2 / (a * a));
    acc->d_log_ell[i] +=
        (gblk * kblk * fac_l).sum() +
        h * static_cast<double>(L) * (2.0 * v2 / b) * kffdi;
  }

  ugrad->d_log_sigma =
      -static_cast<double>(L) +
      (((yobs - m).array().square() + svec.array()) / s2).sum();
  return e;
}

}  // namespace

SiteObjectiveEval eval_site_objective(const SiteDataset& site,
                                      const std::vector<UnitHyper>& hypers,
                                      const MGPState& global_state,
                                      double total_obs, bool with_grad) {
  if (hypers.size() != site.units.size())
    throw std::invalid_argument("hyperparameter/unit count mismatch");
  const double lk = static_cast<double>(site.n_obs());
  if (lk <= 0) throw std::invalid_argument("site has no observations");

  GlobalContext ctx = make_global_context(global_state);
  const Eigen::Index p = global_state.grid.total();
  const Eigen::Index n_latent = global_state.ell.size();

  GlobalAccum acc;
  acc.init(p, n_latent);
  std::vector<UnitGradOut> ugrads(site.units.size());

  double e_sum = 0.0;
  for (std::size_t m = 0; m < site.units.size(); ++m) {
    e_sum += eval_unit(site.units[m].timestamps, site.units[m].signal,
                       hypers[m], global_state, ctx, with_grad, &acc,
                       &ugrads[m]);
  }
  KlEval kl = eval_kl(global_state, ctx, with_grad);

  SiteObjectiveEval out;
  out.value = -e_sum / lk + kl.value / total_obs;
  if (!with_grad) return out;

  // local gradient: d J / d (unit params) = -(dE)/L_k
  const int n_lat = static_cast<int>(n_latent);
  out.grad_local.resize(static_cast<Eigen::Index>(site.units.size()) *
                        (2 * n_lat + 1));
  Eigen::Index k = 0;
  for (const auto& ug : ugrads) {
    for (int i = 0; i < n_lat; ++i) out.grad_local[k++] = -ug.d_scale[i] / lk;
    for (int i = 0; i < n_lat; ++i)
      out.grad_local[k++] = -ug.d_log_width[i] / lk;
    out.grad_local[k++] = -ug.d_log_sigma / lk;
  }

  // global gradient
  Eigen::VectorXd d_log_ell = -acc.d_log_ell / lk;
  Eigen::VectorXd d_mu = -acc.d_mu / lk + kl.d_mu / total_obs;
  Eigen::MatrixXd d_psi = -acc.d_psi / lk + kl.d_psi / total_obs;
  Eigen::MatrixXd g_uu = -acc.g_uu / lk + kl.g_uu / total_obs;

  const auto offs = global_state.grid.offsets();
  for (Eigen::Index i = 0; i < n_latent; ++i) {
    const Eigen::Index pi = global_state.grid.z[i].size();
    const Eigen::Index off = offs[i];
    const double l2 = global_state.ell[i] * global_state.ell[i];
    Eigen::MatrixXd diff =
        global_state.grid.z[i] * Eigen::RowVectorXd::Ones(pi) -
        Eigen::VectorXd::Ones(pi) * global_state.grid.z[i].transpose();
    Eigen::ArrayXXd d2 = diff.array().square();
    d_log_ell[i] += (g_uu.block(off, off, pi, pi).array() *
                     (ctx.kuu.block(off, off, pi, pi).array() * d2 / l2))
                        .sum();
  }

  out.grad_global.resize(global_param_size(global_state));
  k = 0;
  for (Eigen::Index i = 0; i < n_latent; ++i)
    out.grad_global[k++] = d_log_ell[i];
  out.grad_global.segment(k, p) = d_mu;
  k += p;
  for (std::size_t i = 0; i < global_state.grid.z.size(); ++i) {
    const Eigen::Index pi = global_state.grid.z[i].size();
    const Eigen::Index off = offs[i];
    for (Eigen::Index c = 0; c < pi; ++c)
      for (Eigen::Index r = c; r < pi; ++r) {
        out.grad_global[k++] =
            (r == c) ? d_psi(off + r, off + c)
                     : d_psi(off + r, off + c) + d_psi(off + c, off + r);
      }
  }
  return out;
}

VariationalState solve_optimal_variational(const FleetDataset& fleet,
                                           const MGPState& state) {
  if (state.ell.size() != 1)
    throw std::invalid_argument(
        "closed-form optimal q implemented for a single latent function");
  GlobalContext ctx = make_global_context(state);
  const Eigen::Index p = state.grid.total();
  Eigen::MatrixXd kinv = ctx.llt.solve(Eigen::MatrixXd::Identity(p, p));

  Eigen::MatrixXd prec = kinv;
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(p);
  for (const auto& site : fleet.sites) {
    const auto& hypers = state.site_hypers.at(site.site_id);
    for (std::size_t m = 0; m < site.units.size(); ++m) {
      const auto& u = site.units[m];
      Eigen::MatrixXd kfu =
          build_kfu(u.timestamps, state.grid.z, hypers[m].smoothing, state.ell);
      Eigen::MatrixXd w = ctx.llt.solve(kfu.transpose());  // P x L
      const double inv_s2 = 1.0 / (hypers[m].sigma * hypers[m].sigma);
      prec += inv_s2 * (w * w.transpose());
      rhs += inv_s2 * (w * u.signal);
    }
  }
  Eigen::LLT<Eigen::MatrixXd> llt(prec);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("optimal-q precision not positive definite");
  VariationalState vs;
  vs.psi = llt.solve(Eigen::MatrixXd::Identity(p, p));
  vs.mu = llt.solve(rhs);
  return vs;
}

// --- Test-unit adaptation ----------------------------------------------------

ConditionedPredictor::ConditionedPredictor(const UnitHyper& hyper,
                                           const MGPState& state,
                                           const Eigen::VectorXd& t_obs,
                                           const Eigen::VectorXd& y_obs)
    : hyper_(hyper),
      ell_(state.ell),
      z_(state.grid.z) {
  GlobalContext ctx = make_global_context(state);
  llt_kuu_ = ctx.llt;
  psi_ = state.vs.psi;
  a_ = ctx.a;
  if (t_obs.size() == 0) return;

  t_obs_ = t_obs;
  Eigen::MatrixXd kfo = build_kfu(t_obs, z_, hyper_.smoothing, ell_);
  Eigen::MatrixXd wo = llt_kuu_.solve(kfo.transpose());  // P x Lo
  zw_ = psi_ * wo - kfo.transpose();                     // psi W_o - K_uo
  Eigen::MatrixXd soo =
      build_kff(t_obs, t_obs, hyper_.smoothing, hyper_.smoothing, ell_) -
      kfo * wo + wo.transpose() * psi_ * wo;
  soo.diagonal().array() += hyper_.sigma * hyper_.sigma;
  llt_oo_.compute(soo);
  if (llt_oo_.info() != Eigen::Success)
    throw std::runtime_error("conditioning covariance not positive definite");
  Eigen::VectorXd m_o = kfo * a_;
  resid_alpha_ = llt_oo_.solve(y_obs - m_o);
}

PredictResult ConditionedPredictor::predict(
    const Eigen::VectorXd& t_query) const {
  Eigen::MatrixXd kqu = build_kfu(t_query, z_, hyper_.smoothing, ell_);
  Eigen::MatrixXd wq = llt_kuu_.solve(kqu.transpose());  // P x Nq
  Eigen::MatrixXd yq = psi_ * wq;
  const double kffd = kff_diag_value(hyper_.smoothing, ell_);
  Eigen::VectorXd qv =
      (kqu.transpose().array() * wq.array()).colwise().sum().transpose();
  Eigen::VectorXd pv =
      (wq.array() * yq.array()).colwise().sum().transpose();

  PredictResult out;
  out.mean = kqu * a_;
  out.var = (kffd - qv.array() + pv.array()).matrix();

  if (t_obs_.size() > 0) {
    Eigen::MatrixXd cqo =
        build_kff(t_query, t_obs_, hyper_.smoothing, hyper_.smoothing, ell_) +
        wq.transpose() * zw_;  // Nq x Lo
    out.mean += cqo * resid_alpha_;
    Eigen::MatrixXd vsol = llt_oo_.solve(cqo.transpose());  // Lo x Nq
    out.var -= (cqo.transpose().array() * vsol.array())
                   .colwise()
                   .sum()
                   .transpose()
                   .matrix();
  }
  out.var = out.var.cwiseMax(0.0);
  return out;
}

double ConditionedPredictor::mean_at(double t) const {
  Eigen::VectorXd tq(1);
  tq[0] = t;
  Eigen::MatrixXd kqu = build_kfu(tq, z_, hyper_.smoothing, ell_);
  double mean = kqu.row(0).dot(a_);
  if (t_obs_.size() > 0) {
    Eigen::VectorXd wq = llt_kuu_.solve(kqu.row(0).transpose());
    Eigen::VectorXd kqo_row =
        build_kff(tq, t_obs_, hyper_.smoothing, hyper_.smoothing, ell_)
            .row(0)
            .transpose();
    mean += (kqo_row + zw_.transpose() * wq).dot(resid_alpha_);
  }
  return mean;
}

void ConditionedPredictor::mean_batch(const double* t, double* out,
                                      std::size_t n) const {
  Eigen::Map<const Eigen::VectorXd> tq(t, static_cast<Eigen::Index>(n));
  Eigen::MatrixXd kqu = build_kfu(tq, z_, hyper_.smoothing, ell_);
  Eigen::Map<Eigen::VectorXd> mean(out, static_cast<Eigen::Index>(n));
  mean = kqu * a_;
  if (t_obs_.size() > 0) {
    Eigen::MatrixXd wq = llt_kuu_.solve(kqu.transpose());
    Eigen::MatrixXd cqo =
        build_kff(tq, t_obs_, hyper_.smoothing, hyper_.smoothing, ell_) +
        wq.transpose() * zw_;
    mean += cqo * resid_alpha_;
  }
}

AdaptedUnit adapt_test_unit(const UnitRecord& partial, const MGPState& state,
                            const AdaptOptions& opts) {
  const int n_latent = state.n_latent();
  // Cross-unit average of the trained hyperparameters as the starting point.
  UnitHyper init;
  init.smoothing.assign(n_latent, SmoothingKernel{0.0, 1.0});
  Eigen::VectorXd log_v = Eigen::VectorXd::Zero(n_latent);
  double log_sigma = 0.0;
  int count = 0;
  for (const auto& [sid, hypers] : state.site_hypers) {
    for (const auto& h : hypers) {
      for (int i = 0; i < n_latent; ++i) {
        init.smoothing[i].scale += h.smoothing[i].scale;
        log_v[i] += std::log(h.smoothing[i].width);
      }
      log_sigma += std::log(h.sigma);
      ++count;
    }
  }
  if (count == 0) throw std::invalid_argument("state holds no trained units");
  for (int i = 0; i < n_latent; ++i) {
    init.smoothing[i].scale /= count;
    init.smoothing[i].width = std::exp(log_v[i] / count);
  }
  init.sigma = std::exp(log_sigma / count);

  AdaptedUnit out;
  out.hyper = init;

  if (partial.n_obs() == 0) {
    out.predictor = ConditionedPredictor(init, state, Eigen::VectorXd(),
                                         Eigen::VectorXd());
    return out;
  }

  GlobalContext ctx = make_global_context(state);
  const double lp = static_cast<double>(partial.n_obs());
  auto objective = [&](const std::vector<UnitHyper>& hv, bool with_grad,
                       Eigen::VectorXd* grad) {
    GlobalAccum acc;
    acc.init(state.grid.total(), n_latent);
    UnitGradOut ug;
    const double e = eval_unit(partial.timestamps, partial.signal, hv[0],
                               state, ctx, with_grad, &acc, &ug);
    if (with_grad) {
      grad->resize(2 * n_latent + 1);
      for (int i = 0; i < n_latent; ++i) (*grad)[i] = -ug.d_scale[i] / lp;
      for (int i = 0; i < n_latent; ++i)
        (*grad)[n_latent + i] = -ug.d_log_width[i] / lp;
      (*grad)[2 * n_latent] = -ug.d_log_sigma / lp;
    }
    return -e / lp;
  };

  std::vector<UnitHyper> hv{init};
  Eigen::VectorXd params = pack_site_local(hv);
  Eigen::VectorXd best = params;
  double best_val = objective(hv, false, nullptr);
  if (!std::isfinite(best_val)) {
    out.fell_back = true;
    out.predictor = ConditionedPredictor(init, state, partial.timestamps,
                                         partial.signal);
    return out;
  }

  AdamState adam;
  bool diverged = false;
  for (int it = 0; it < opts.iterations; ++it) {
    Eigen::VectorXd grad;
    unpack_site_local(params, &hv);
    const double val = objective(hv, true, &grad);
    if (!std::isfinite(val) || !grad.allFinite()) {
      diverged = true;
      break;
    }
    for (int i = 0; i < n_latent; ++i) {
      if (!opts.fit_scales) grad[i] = 0.0;
      if (!opts.fit_widths) grad[n_latent + i] = 0.0;
    }
    if (val < best_val) {
      best_val = val;
      best = params;
    }
    params -= adam.step(opts.learning_rate, grad);
  }
  unpack_site_local(best, &hv);
  out.hyper = hv[0];
  out.fell_back = diverged;
  if (diverged) out.hyper = init;
  out.predictor = ConditionedPredictor(out.hyper, state, partial.timestamps,
                                       partial.signal);
  return out;
}

// --- Checkpoint --------------------------------------------------------------

void save_mgp_checkpoint(const MGPState& state, const std::string& path) {
  nlohmann::json j;
  j["version"] = 1;
  j["kind"] = "mgp-state";
  j["ell"] = vec_to_json(state.ell);
  nlohmann::json grid = nlohmann::json::array();
  for (const auto& zi : state.grid.z) grid.push_back(vec_to_json(zi));
  j["grid"] = grid;
  j["mu"] = vec_to_json(state.vs.mu);
  j["psi"] = mat_to_json(state.vs.psi);
  nlohmann::json sites = nlohmann::json::object();
  for (const auto& [sid, hypers] : state.site_hypers) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& h : hypers) {
      nlohmann::json hj;
      Eigen::VectorXd s(h.smoothing.size()), v(h.smoothing.size());
      for (std::size_t i = 0; i < h.smoothing.size(); ++i) {
        s[static_cast<Eigen::Index>(i)] = h.smoothing[i].scale;
        v[static_cast<Eigen::Index>(i)] = h.smoothing[i].width;
      }
      hj["scale"] = vec_to_json(s);
      hj["width"] = vec_to_json(v);
      hj["sigma"] = fmt17(h.sigma);
      arr.push_back(std::move(hj));
    }
    sites[std::to_string(sid)] = std::move(arr);
  }
  j["sites"] = std::move(sites);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  out << j.dump(1) << '\n';
}

MGPState load_mgp_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  nlohmann::json j = nlohmann::json::parse(in);
  if (j.at("version").get<int>() != 1)
    throw std::runtime_error("unsupported checkpoint version");
  MGPState state;
  state.ell = vec_from_json(j.at("ell"));
  for (const auto& zi : j.at("grid")) state.grid.z.push_back(vec_from_json(zi));
  state.vs.mu = vec_from_json(j.at("mu"));
  state.vs.psi = mat_from_json(j.at("psi"));
  for (const auto& [key, arr] : j.at("sites").items()) {
    std::vector<UnitHyper> hypers;
    for (const auto& hj : arr) {
      UnitHyper h;
      Eigen::VectorXd s = vec_from_json(hj.at("scale"));
      Eigen::VectorXd v = vec_from_json(hj.at("width"));
      for (Eigen::Index i = 0; i < s.size(); ++i)
        h.smoothing.push_back({s[i], v[i]});
      h.sigma = std::strtod(hj.at("sigma").get<std::string>().c_str(), nullptr);
      hypers.push_back(std::move(h));
    }
    state.site_hypers[std::stoi(key)] = std::move(hypers);
  }
  return state;
}

}  // namespace fedprog
