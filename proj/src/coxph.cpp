#include "fedprog/coxph.hpp"

#include "fedprog/num_format.hpp"
#include "fedprog/quadrature.hpp"
#include "fedprog/simd/vexp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace fedprog {

double BaselineHazard::value(double t) const {
  if (kind == Kind::Exponential) return lambda;
  return lambda * rho * std::pow(t, rho - 1.0);
}

double BaselineHazard::log_value(double t) const {
  if (kind == Kind::Exponential) return std::log(lambda);
  return std::log(lambda) + std::log(rho) + (rho - 1.0) * std::log(t);
}

Trajectory Trajectory::from_scalar(std::function<double(double)> f,
                                   double horizon) {
  Trajectory traj;
  traj.batch_ = [f = std::move(f)](const double* t, double* out,
                                   std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(t[i]);
  };
  traj.horizon_ = horizon;
  return traj;
}

Trajectory Trajectory::from_batch(
    std::function<void(const double*, double*, std::size_t)> f,
    double horizon) {
  Trajectory traj;
  traj.batch_ = std::move(f);
  traj.horizon_ = horizon;
  return traj;
}

double Trajectory::operator()(double t) const {
  double out;
  batch_(&t, &out, 1);
  return out;
}

void Trajectory::eval(const double* t, double* out, std::size_t n) const {
  batch_(t, out, n);
}

double hazard(double t, const Eigen::VectorXd& w, const Trajectory& traj,
              const CoxParams& params) {
  if (t < 0.0) throw std::invalid_argument("hazard requires t >= 0");
  double arg = params.beta * traj(t);
  if (params.gamma.size() > 0) arg += params.gamma.dot(w);
  return params.baseline.value(t) * std::exp(arg);
}

namespace {

// Segment boundaries for the hazard integrals. The Weibull baseline carries a
// u^{rho-1} factor with unbounded derivatives at 0, so the left end is graded
// geometrically when the interval starts there.
std::vector<double> hazard_segments(double a, double b,
                                    const BaselineHazard& baseline) {
  std::vector<double> pts;
  const double span = b - a;
  pts.push_back(a);
  double uniform_start = a;
  if (baseline.kind == BaselineHazard::Kind::Weibull && baseline.rho != 1.0 &&
      a <= 1e-9 * span) {
    for (int k = 8; k >= 1; --k) pts.push_back(a + span * std::pow(10.0, -k));
    uniform_start = a + span * 0.1;
  }
  const int uniform_segments = 8;
  const double h = (b - uniform_start) / uniform_segments;
  for (int s = 1; s <= uniform_segments; ++s)
    pts.push_back(uniform_start + s * h);
  pts.back() = b;
  return pts;
}

constexpr int kGlOrder = 64;

double cumhaz_impl(double a, double b, const Eigen::VectorXd& w,
                   const Trajectory& traj, const CoxParams& params) {
  if (a == b) return 0.0;
  const auto pts = hazard_segments(a, b, params.baseline);
  const GaussLegendre& rule = gauss_legendre(kGlOrder);

  const double wterm =
      params.gamma.size() > 0 ? params.gamma.dot(w) : 0.0;
  std::vector<double> nodes, fvals, args;
  double total = 0.0;
  for (std::size_t s = 0; s + 1 < pts.size(); ++s) {
    const double c = 0.5 * (pts[s] + pts[s + 1]);
    const double h = 0.5 * (pts[s + 1] - pts[s]);
    if (h <= 0.0) continue;
    nodes.resize(kGlOrder);
    for (int i = 0; i < kGlOrder; ++i) nodes[i] = c + h * rule.nodes[i];
    fvals.resize(kGlOrder);
    traj.eval(nodes.data(), fvals.data(), nodes.size());
    args.resize(kGlOrder);
    for (int i = 0; i < kGlOrder; ++i)
      args[i] = wterm + params.beta * fvals[i];
    simd::vexp(args.data(), args.data(), args.size());
    double seg = 0.0;
    for (int i = 0; i < kGlOrder; ++i)
      seg += rule.weights[i] * params.baseline.value(nodes[i]) * args[i];
    total += seg * h;
  }
  return total;
}

}  // namespace

double cumulative_hazard(double a, double b, const Eigen::VectorXd& w,
                         const Trajectory& traj, const CoxParams& params) {
  if (a < 0.0 || b < a)
    throw std::invalid_argument("cumulative_hazard requires 0 <= a <= b");
  return cumhaz_impl(a, b, w, traj, params);
}

double unit_loglik(const UnitRecord& unit, const Trajectory& traj,
                   const CoxParams& params) {
  if (traj.horizon() < unit.event_time)
    throw std::invalid_argument("trajectory not defined up to the event time");
  const double lam = cumhaz_impl(0.0, unit.event_time, unit.covariates, traj,
                                 params);
  double ll = -lam;
  if (unit.event_indicator == 1) {
    double arg = params.baseline.log_value(unit.event_time) +
                 params.beta * traj(unit.event_time);
    if (params.gamma.size() > 0) arg += params.gamma.dot(unit.covariates);
    ll += arg;
  }
  return ll;
}

double neg_loglik(const std::vector<SiteDataset>& sites,
                  const std::vector<std::vector<Trajectory>>& trajectories,
                  const CoxParams& params) {
  if (sites.size() != trajectories.size())
    throw std::invalid_argument("site/trajectory count mismatch");
  double sum = 0.0;
  int m_total = 0;
  for (std::size_t k = 0; k < sites.size(); ++k) {
    if (sites[k].units.size() != trajectories[k].size())
      throw std::invalid_argument("unit/trajectory count mismatch");
    for (std::size_t m = 0; m < sites[k].units.size(); ++m)
      sum -= unit_loglik(sites[k].units[m], trajectories[k][m], params);
    m_total += static_cast<int>(sites[k].units.size());
  }
  if (m_total == 0) throw std::invalid_argument("no units");
  return sum / m_total;
}

double failure_probability(double t_star, double dt, const Eigen::VectorXd& w,
                           const Trajectory& traj, const CoxParams& params) {
  if (dt < 0.0) throw std::invalid_argument("dt must be nonnegative");
  return 1.0 - std::exp(-cumulative_hazard(t_star, t_star + dt, w, traj,
                                           params));
}

MeanRulResult mean_rul(double t_star, const Eigen::VectorXd& w,
                       const Trajectory& traj, const CoxParams& params,
                       double t_max, double tail_tol) {
  if (!(t_max > t_star))
    throw std::invalid_argument("mean_rul requires t_max > t_star");
  const int outer_segments = 64;
  const int outer_order = 32;
  const int inner_order = 16;
  const GaussLegendre& rule = gauss_legendre(outer_order);
  const double wterm = params.gamma.size() > 0 ? params.gamma.dot(w) : 0.0;

  auto haz = [&](double u) {
    return params.baseline.value(u) *
           std::exp(wterm + params.beta * traj(u));
  };

  const double h = (t_max - t_star) / outer_segments;
  double lam = 0.0;          // running cumulative hazard from t_star
  double u_prev = t_star;
  double mrl = 0.0;
  double s_last = 1.0;
  for (int s = 0; s < outer_segments; ++s) {
    const double a = t_star + s * h;
    const double c = a + 0.5 * h;
    double seg = 0.0;
    for (int i = 0; i < outer_order; ++i) {
      const double u = c + 0.5 * h * rule.nodes[i];
      lam += gl_integrate(haz, u_prev, u, inner_order);
      u_prev = u;
      s_last = std::exp(-lam);
      seg += rule.weights[i] * s_last;
    }
    mrl += seg * 0.5 * h;
    if (s_last < 1e-15) break;
  }
  lam += gl_integrate(haz, u_prev, t_max, inner_order);
  MeanRulResult out;
  out.value = mrl;
  out.tail_survival = std::exp(-lam);
  out.tail_flagged = out.tail_survival > tail_tol;
  return out;
}

void write_survival_csv(const std::string& path, double t_star,
                        const Eigen::VectorXd& grid, const Eigen::VectorXd& w,
                        const Trajectory& traj, const CoxParams& params) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "t,survival,failure\n";
  double lam = 0.0;
  double prev = t_star;
  for (Eigen::Index i = 0; i < grid.size(); ++i) {
    const double t = grid[i];
    if (t < t_star) continue;
    lam += cumhaz_impl(prev, t, w, traj, params);
    prev = t;
    const double s = std::exp(-lam);
    out << fmt17(t) << ',' << fmt17(s) << ',' << fmt17(1.0 - s) << '\n';
  }
}

// --- Training support ---------------------------------------------------------

std::vector<CoxUnitCache> build_cox_cache(
    const SiteDataset& site, const std::vector<Trajectory>& trajectories) {
  if (site.units.size() != trajectories.size())
    throw std::invalid_argument("unit/trajectory count mismatch");
  const GaussLegendre& rule = gauss_legendre(kGlOrder);
  std::vector<CoxUnitCache> cache;
  cache.reserve(site.units.size());
  for (std::size_t m = 0; m < site.units.size(); ++m) {
    const auto& u = site.units[m];
    CoxUnitCache c;
    c.V = u.event_time;
    c.delta = u.event_indicator;
    c.w = u.covariates;
    // Grade as in the Weibull case unconditionally; harmless for the
    // exponential baseline and keeps the cache baseline-agnostic.
    BaselineHazard graded;
    graded.kind = BaselineHazard::Kind::Weibull;
    graded.rho = 1.5;
    const auto pts = hazard_segments(0.0, c.V, graded);
    const int nseg = static_cast<int>(pts.size()) - 1;
    c.nodes.resize(nseg * kGlOrder);
    c.weights.resize(nseg * kGlOrder);
    Eigen::Index k = 0;
    for (int s = 0; s < nseg; ++s) {
      const double ctr = 0.5 * (pts[s] + pts[s + 1]);
      const double half = 0.5 * (pts[s + 1] - pts[s]);
      for (int i = 0; i < kGlOrder; ++i, ++k) {
        c.nodes[k] = ctr + half * rule.nodes[i];
        c.weights[k] = half * rule.weights[i];
      }
    }
    c.f_nodes.resize(c.nodes.size());
    trajectories[m].eval(c.nodes.data(), c.f_nodes.data(),
                         static_cast<std::size_t>(c.nodes.size()));
    c.log_nodes = c.nodes.array().log();
    c.f_at_V = trajectories[m](c.V);
    cache.push_back(std::move(c));
  }
  return cache;
}

CoxParamLayout layout_of(const CoxParams& params) {
  CoxParamLayout layout;
  layout.weibull = params.baseline.kind == BaselineHazard::Kind::Weibull;
  layout.n_cov = static_cast<int>(params.gamma.size());
  return layout;
}

Eigen::VectorXd pack_cox(const CoxParams& params) {
  const CoxParamLayout layout = layout_of(params);
  Eigen::VectorXd out(layout.size());
  Eigen::Index k = 0;
  out[k++] = std::log(params.baseline.lambda);
  if (layout.weibull) out[k++] = std::log(params.baseline.rho);
  for (int i = 0; i < layout.n_cov; ++i) out[k++] = params.gamma[i];
  out[k] = params.beta;
  return out;
}

CoxParams unpack_cox(const Eigen::VectorXd& packed,
                     const CoxParamLayout& layout) {
  CoxParams params;
  params.baseline.kind = layout.weibull ? BaselineHazard::Kind::Weibull
                                        : BaselineHazard::Kind::Exponential;
  Eigen::Index k = 0;
  params.baseline.lambda = std::exp(packed[k++]);
  if (layout.weibull) params.baseline.rho = std::exp(packed[k++]);
  params.gamma.resize(layout.n_cov);
  for (int i = 0; i < layout.n_cov; ++i) params.gamma[i] = packed[k++];
  params.beta = packed[k];
  return params;
}

double site_cox_objective(const std::vector<CoxUnitCache>& cache,
                          const CoxParams& params, bool with_grad,
                          Eigen::VectorXd* grad) {
  if (cache.empty()) throw std::invalid_argument("empty site cache");
  const CoxParamLayout layout = layout_of(params);
  const bool weibull = layout.weibull;
  const double log_lambda = std::log(params.baseline.lambda);
  const double log_rho = std::log(params.baseline.rho);
  const double rho = params.baseline.rho;

  double sum_ll = 0.0;
  Eigen::VectorXd g = Eigen::VectorXd::Zero(layout.size());
  Eigen::VectorXd args, hz;
  for (const auto& c : cache) {
    const double wterm =
        layout.n_cov > 0 ? params.gamma.dot(c.w) : 0.0;
    const Eigen::Index n = c.nodes.size();
    args.resize(n);
    // h(u) = exp(log lambda [+ log rho + (rho-1) log u] + w'gamma + beta f(u))
    for (Eigen::Index j = 0; j < n; ++j) {
      double a = log_lambda + wterm + params.beta * c.f_nodes[j];
      if (weibull) a += log_rho + (rho - 1.0) * c.log_nodes[j];
      args[j] = a;
    }
    hz.resize(n);
    simd::vexp(args.data(), hz.data(), static_cast<std::size_t>(n));
    const double lam = c.weights.dot(hz);

    double ll = -lam;
    if (c.delta == 1) {
      double lv = log_lambda + wterm + params.beta * c.f_at_V;
      if (weibull) lv += log_rho + (rho - 1.0) * std::log(c.V);
      ll += lv;
    }
    sum_ll += ll;

    if (with_grad) {
      Eigen::Index k = 0;
      g[k++] += c.delta - lam;  // d ll / d log lambda
      if (weibull) {
        const double dlam_dlogrho =
            (c.weights.array() * hz.array() *
             (1.0 + rho * c.log_nodes.array()))
                .sum();
        g[k++] += (c.delta == 1 ? 1.0 + rho * std::log(c.V) : 0.0) -
                  dlam_dlogrho;
      }
      for (int i = 0; i < layout.n_cov; ++i)
        g[k++] += c.w[i] * (c.delta - lam);
      const double dlam_dbeta =
          (c.weights.array() * hz.array() * c.f_nodes.array()).sum();
      g[k] += (c.delta == 1 ? c.f_at_V : 0.0) - dlam_dbeta;
    }
  }
  const double m = static_cast<double>(cache.size());
  if (with_grad) *grad = -g / m;
  return -sum_ll / m;
}

}  // namespace fedprog
