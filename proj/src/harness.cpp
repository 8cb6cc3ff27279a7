#include "fedprog/harness.hpp"

#include "fedprog/num_format.hpp"
#include "fedprog/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace fedprog {

namespace fs = std::filesystem;
using nlohmann::json;

double mae_mrl(const Eigen::VectorXd& true_rul,
               const Eigen::VectorXd& est_rul) {
  if (true_rul.size() != est_rul.size())
    throw std::invalid_argument("RUL vector length mismatch");
  if (true_rul.size() == 0) throw std::invalid_argument("empty RUL vectors");
  return (true_rul - est_rul).cwiseAbs().mean();
}

double mae_f(const Eigen::VectorXd& true_f, const Eigen::VectorXd& est_f) {
  if (true_f.size() != est_f.size())
    throw std::invalid_argument("failure-probability length mismatch");
  if (true_f.size() == 0) throw std::invalid_argument("empty inputs");
  for (Eigen::Index i = 0; i < true_f.size(); ++i) {
    if (true_f[i] < 0.0 || true_f[i] > 1.0 || est_f[i] < 0.0 ||
        est_f[i] > 1.0)
      throw std::invalid_argument("failure probabilities must lie in [0,1]");
  }
  return (true_f - est_f).cwiseAbs().mean();
}

ExperimentConfig desk_synth_profile(Scenario scenario) {
  ExperimentConfig cfg;
  cfg.dataset = "synth";
  cfg.scenario = scenario;
  cfg.n_sites = 3;
  cfg.units_per_site = 10;
  cfg.repeats = 5;
  cfg.alphas = {0.3, 0.5, 0.7};
  cfg.dts = {12, 15, 18};
  cfg.train.baseline_kind = BaselineHazard::Kind::Weibull;
  cfg.train.fed.optimizer = FedConfig::Optimizer::Adam;
  cfg.train.fed.eta1 = 0.05;
  cfg.train.fed.E1 = 5;
  cfg.train.fed.R1 = 400;
  cfg.train.fed.eta2 = 0.05;
  cfg.train.fed.E2 = 5;
  cfg.train.fed.R2 = 400;
  return cfg;
}

ExperimentConfig paper_synth_profile(Scenario scenario) {
  ExperimentConfig cfg = desk_synth_profile(scenario);
  cfg.units_per_site = 20;
  cfg.repeats = 20;
  cfg.train.fed.R1 = 600;
  cfg.train.fed.R2 = 400;
  return cfg;
}

ExperimentConfig desk_cmapss_profile(const std::string& path, int sensor) {
  ExperimentConfig cfg;
  cfg.dataset = "cmapss";
  cfg.cmapss_path = path;
  cfg.cmapss_sensor = sensor;
  cfg.methods = {"fed", "cen"};
  cfg.repeats = 1;
  cfg.alphas = {0.3, 0.5, 0.7};
  cfg.dts = {50, 70, 90};
  cfg.train.baseline_kind = BaselineHazard::Kind::Exponential;
  cfg.train.fed.optimizer = FedConfig::Optimizer::Adam;
  cfg.train.fed.eta1 = 0.05;
  cfg.train.fed.E1 = 5;
  cfg.train.fed.R1 = 240;
  cfg.train.fed.eta2 = 0.05;
  cfg.train.fed.E2 = 5;
  cfg.train.fed.R2 = 240;
  return cfg;
}

namespace {

struct RepeatOutcome {
  bool ok = false;
  std::string error;
  // method -> alpha -> value
  std::map<std::string, std::map<double, double>> mrl;
  // method -> alpha -> dt -> value
  std::map<std::string, std::map<double, std::map<double, double>>> f;
};

struct SynthTruthLookup {
  const std::vector<TrueModel>* truth = nullptr;
  int units_per_site = 0;
  const TrueModel& at(int site, int unit) const {
    return (*truth)[static_cast<std::size_t>(site) * units_per_site + unit];
  }
};

FittedJointModel train_method(const std::string& method,
                              const ExperimentConfig& cfg,
                              const FleetDataset& training,
                              const TrainOptions& topts) {
  if (method == "fed") {
    std::vector<int> site_ids;
    for (const auto& s : training.sites) site_ids.push_back(s.site_id);
    auto transport = make_transport(cfg.transport, site_ids);
    return train_fed_joint(training, topts, *transport);
  }
  if (method == "cen") return train_cen_joint(training, topts);
  if (method == "ind")
    return train_ind_joint(training.site(cfg.ind_training_site), topts);
  if (method == "lmm")
    return train_lmm_joint(training.site(cfg.ind_training_site), topts);
  throw std::invalid_argument("unknown method '" + method + "'");
}

RepeatOutcome run_one_repeat(const ExperimentConfig& cfg, int repeat,
                             const CmapssIngest* cmapss) {
  RepeatOutcome out;
  const std::uint64_t seed_r = derive_stream(cfg.seed, repeat + 1);

  FleetDataset fleet;
  SynthFleet synth;
  SynthConfig scfg;
  if (cfg.dataset == "synth") {
    scfg.scenario = cfg.scenario;
    scfg.n_sites = cfg.n_sites;
    scfg.units_per_site = cfg.units_per_site;
    scfg.seed = seed_r;
    synth = generate_fleet(scfg);
    fleet = synth.fleet;
  } else if (cfg.dataset == "cmapss") {
    if (!cmapss) throw std::invalid_argument("cmapss data not loaded");
    fleet = assign_sites(cmapss->units, cfg.cmapss_site_sizes, seed_r);
    std::vector<int> train_ids;
    for (const auto& s : fleet.sites)
      if (s.site_id != cfg.test_site) train_ids.push_back(s.site_id);
    Standardizer st = fit_standardizer(fleet, train_ids);
    apply_standardizer(st, &fleet);
  } else {
    throw std::invalid_argument("unknown dataset '" + cfg.dataset + "'");
  }

  FleetDataset training;
  for (const auto& s : fleet.sites)
    if (s.site_id != cfg.test_site) training.sites.push_back(s);
  const SiteDataset& test = fleet.site(cfg.test_site);

  double max_event = 0.0;
  for (const auto& s : fleet.sites)
    for (const auto& u : s.units) max_event = std::max(max_event, u.event_time);
  const double t_max = cfg.tmax_factor * max_event;

  TrainOptions topts = cfg.train;
  topts.trajectory_horizon = t_max;

  SynthTruthLookup truth{&synth.truth, cfg.units_per_site};

  // Reference model for case-study failure probabilities (MAE_F truth is
  // reference-relative on real data; see report note).
  FittedJointModel reference;
  bool have_reference = false;

  for (const auto& method : cfg.methods) {
    FittedJointModel model = train_method(method, cfg, training, topts);
    if (cfg.dataset == "cmapss" && method == "cen") {
      reference = model;
      have_reference = true;
    }

    for (double alpha : cfg.alphas) {
      std::vector<double> tr, er;
      std::map<double, std::vector<double>> tf, ef;
      for (const auto& unit : test.units) {
        if (cfg.dataset == "synth" && unit.event_indicator == 0)
          continue;  // censored test units carry no identified true RUL
        TruncationResult trunc = truncate_at_fraction(unit, alpha);
        Trajectory traj = model.trajectory_for(trunc.partial);
        MeanRulResult mrl =
            mean_rul(trunc.t_star, unit.covariates, traj, model.cox, t_max);
        er.push_back(mrl.value);

        if (cfg.dataset == "synth") {
          const TrueModel& tm = truth.at(unit.site_id, unit.unit_id);
          tr.push_back(tm.sampled_failure_time - trunc.t_star);
          Trajectory true_traj = tm.trajectory(t_max);
          for (double dt : cfg.dts) {
            tf[dt].push_back(failure_probability(
                trunc.t_star, dt, unit.covariates, true_traj, tm.cox));
            ef[dt].push_back(failure_probability(trunc.t_star, dt,
                                                 unit.covariates, traj,
                                                 model.cox));
          }
        } else {
          tr.push_back(cmapss->raw_ending_cycle[unit.unit_id] - trunc.t_star);
          for (double dt : cfg.dts)
            ef[dt].push_back(failure_probability(trunc.t_star, dt,
                                                 unit.covariates, traj,
                                                 model.cox));
        }
      }
      if (cfg.dataset == "cmapss") {
        if (!have_reference) {
          reference = train_cen_joint(training, topts);
          have_reference = true;
        }
        for (const auto& unit : test.units) {
          TruncationResult trunc = truncate_at_fraction(unit, alpha);
          Trajectory ref_traj = reference.trajectory_for(unit);  // full record
          for (double dt : cfg.dts)
            tf[dt].push_back(failure_probability(trunc.t_star, dt,
                                                 unit.covariates, ref_traj,
                                                 reference.cox));
        }
      }
      auto to_vec = [](const std::vector<double>& v) {
        return Eigen::Map<const Eigen::VectorXd>(v.data(),
                                                 static_cast<Eigen::Index>(
                                                     v.size()))
            .eval();
      };
      out.mrl[method][alpha] = mae_mrl(to_vec(tr), to_vec(er));
      for (double dt : cfg.dts)
        out.f[method][alpha][dt] = mae_f(to_vec(tf[dt]), to_vec(ef[dt]));
    }
  }
  out.ok = true;
  return out;
}

void push_stats(CellStats* cell, double v) { cell->raw.push_back(v); }

}  // namespace

void finalize_stats(MetricsReport* report) {
  auto fin = [](CellStats* cell) {
    const auto& r = cell->raw;
    if (r.empty()) {
      cell->mean = cell->sd = 0.0;
      return;
    }
    double sum = 0.0;
    for (double v : r) sum += v;
    cell->mean = sum / r.size();
    double ss = 0.0;
    for (double v : r) ss += (v - cell->mean) * (v - cell->mean);
    cell->sd = r.size() > 1 ? std::sqrt(ss / (r.size() - 1)) : 0.0;
  };
  for (auto& [m, by_alpha] : report->mrl)
    for (auto& [a, cell] : by_alpha) fin(&cell);
  for (auto& [m, by_alpha] : report->f)
    for (auto& [a, by_dt] : by_alpha)
      for (auto& [d, cell] : by_dt) fin(&cell);
}

MetricsReport run_experiment(const ExperimentConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  MetricsReport report;
  report.methods = cfg.methods;
  report.alphas = cfg.alphas;
  report.dts = cfg.dts;
  report.repeats = cfg.repeats;
  report.dataset = cfg.dataset;
  if (cfg.dataset == "cmapss")
    report.note =
        "MAE_F is reference-relative: probabilities from a pooled model "
        "conditioned on fully observed test signals";

  CmapssIngest ingest;
  if (cfg.dataset == "cmapss") {
    auto series = parse_fd001(cfg.cmapss_path);
    ingest = build_units(series, cfg.cmapss_sensor, cfg.cmapss_threshold);
  }

  std::vector<RepeatOutcome> outcomes(cfg.repeats);
  const int workers = std::max(1, cfg.workers);
  if (workers == 1) {
    for (int r = 0; r < cfg.repeats; ++r) {
      try {
        outcomes[r] = run_one_repeat(cfg, r,
                                     cfg.dataset == "cmapss" ? &ingest
                                                             : nullptr);
      } catch (const std::exception& e) {
        outcomes[r].ok = false;
        outcomes[r].error =
            "repeat " + std::to_string(r) + ": " + e.what();
      }
    }
  } else {
    std::mutex mu;
    int next = 0;
    auto worker = [&]() {
      for (;;) {
        int r;
        {
          std::lock_guard<std::mutex> lock(mu);
          if (next >= cfg.repeats) return;
          r = next++;
        }
        try {
          outcomes[r] = run_one_repeat(cfg, r,
                                       cfg.dataset == "cmapss" ? &ingest
                                                               : nullptr);
        } catch (const std::exception& e) {
          outcomes[r].ok = false;
          outcomes[r].error =
              "repeat " + std::to_string(r) + ": " + e.what();
        }
      }
    };
    std::vector<std::thread> pool;
    for (int i = 0; i < workers; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  for (int r = 0; r < cfg.repeats; ++r) {
    const RepeatOutcome& oc = outcomes[r];
    if (!oc.ok) {
      report.failures.push_back(oc.error);
      continue;
    }
    for (const auto& method : cfg.methods) {
      for (double a : cfg.alphas) {
        push_stats(&report.mrl[method][a], oc.mrl.at(method).at(a));
        for (double d : cfg.dts)
          push_stats(&report.f[method][a][d], oc.f.at(method).at(a).at(d));
      }
    }
  }
  finalize_stats(&report);
  report.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  if (!cfg.outdir.empty()) {
    fs::create_directories(cfg.outdir);
    write_report_json(report, cfg.outdir + "/metrics.json");
    emit_tables(report, "csv", cfg.outdir);
  }
  return report;
}

// --- Report serialization -------------------------------------------------------

namespace {

json stats_to_json(const CellStats& cell) {
  json j;
  j["mean"] = fmt17(cell.mean);
  j["sd"] = fmt17(cell.sd);
  json raw = json::array();
  for (double v : cell.raw) raw.push_back(fmt17(v));
  j["raw"] = std::move(raw);
  return j;
}

CellStats stats_from_json(const json& j) {
  CellStats cell;
  cell.mean = std::strtod(j.at("mean").get<std::string>().c_str(), nullptr);
  cell.sd = std::strtod(j.at("sd").get<std::string>().c_str(), nullptr);
  for (const auto& v : j.at("raw"))
    cell.raw.push_back(std::strtod(v.get<std::string>().c_str(), nullptr));
  return cell;
}

std::string key_of(double v) { return fmt17(v); }

}  // namespace

void write_report_json(const MetricsReport& report, const std::string& path) {
  json j;
  j["version"] = 1;
  j["dataset"] = report.dataset;
  j["methods"] = report.methods;
  json alphas = json::array(), dts = json::array();
  for (double a : report.alphas) alphas.push_back(fmt17(a));
  for (double d : report.dts) dts.push_back(fmt17(d));
  j["alphas"] = std::move(alphas);
  j["dts"] = std::move(dts);
  j["repeats"] = report.repeats;
  j["note"] = report.note;
  j["runtime_seconds"] = report.runtime_seconds;
  j["failures"] = report.failures;
  json mrl = json::object();
  for (const auto& [m, by_alpha] : report.mrl) {
    json ja = json::object();
    for (const auto& [a, cell] : by_alpha) ja[key_of(a)] = stats_to_json(cell);
    mrl[m] = std::move(ja);
  }
  j["mae_mrl"] = std::move(mrl);
  json f = json::object();
  for (const auto& [m, by_alpha] : report.f) {
    json ja = json::object();
    for (const auto& [a, by_dt] : by_alpha) {
      json jd = json::object();
      for (const auto& [d, cell] : by_dt) jd[key_of(d)] = stats_to_json(cell);
      ja[key_of(a)] = std::move(jd);
    }
    f[m] = std::move(ja);
  }
  j["mae_f"] = std::move(f);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write report " + path);
  out << j.dump(1) << '\n';
}

MetricsReport read_report_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open report " + path);
  json j = json::parse(in);
  MetricsReport report;
  report.dataset = j.at("dataset").get<std::string>();
  report.methods = j.at("methods").get<std::vector<std::string>>();
  for (const auto& a : j.at("alphas"))
    report.alphas.push_back(std::strtod(a.get<std::string>().c_str(), nullptr));
  for (const auto& d : j.at("dts"))
    report.dts.push_back(std::strtod(d.get<std::string>().c_str(), nullptr));
  report.repeats = j.at("repeats").get<int>();
  report.note = j.at("note").get<std::string>();
  report.runtime_seconds = j.at("runtime_seconds").get<double>();
  report.failures = j.at("failures").get<std::vector<std::string>>();
  for (const auto& [m, ja] : j.at("mae_mrl").items())
    for (const auto& [a, cell] : ja.items())
      report.mrl[m][std::strtod(a.c_str(), nullptr)] = stats_from_json(cell);
  for (const auto& [m, ja] : j.at("mae_f").items())
    for (const auto& [a, jd] : ja.items())
      for (const auto& [d, cell] : jd.items())
        report.f[m][std::strtod(a.c_str(), nullptr)]
                [std::strtod(d.c_str(), nullptr)] = stats_from_json(cell);
  return report;
}

void emit_tables(const MetricsReport& report, const std::string& format,
                 const std::string& dir) {
  fs::create_directories(dir);
  if (format == "json") {
    write_report_json(report, dir + "/metrics.json");
    return;
  }
  if (format != "csv") throw std::invalid_argument("format must be csv|json");

  auto cell_str = [](const CellStats& cell) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.2f (%.2f)", cell.mean, cell.sd);
    return std::string(buf);
  };

  {
    std::ofstream out(dir + "/table_mae_mrl.csv");
    out << "method";
    for (double a : report.alphas) out << ",alpha=" << a;
    out << '\n';
    for (const auto& m : report.methods) {
      out << m;
      for (double a : report.alphas) {
        auto it = report.mrl.find(m);
        if (it != report.mrl.end() && it->second.count(a))
          out << ',' << cell_str(it->second.at(a));
        else
          out << ',';
      }
      out << '\n';
    }
    if (!report.note.empty()) out << "# " << report.note << '\n';
  }
  {
    std::ofstream out(dir + "/table_mae_f.csv");
    out << "method,alpha";
    for (double d : report.dts) out << ",dt=" << d;
    out << '\n';
    for (const auto& m : report.methods) {
      for (double a : report.alphas) {
        out << m << ',' << a;
        for (double d : report.dts) {
          auto it = report.f.find(m);
          if (it != report.f.end() && it->second.count(a) &&
              it->second.at(a).count(d))
            out << ',' << cell_str(it->second.at(a).at(d));
          else
            out << ',';
        }
        out << '\n';
      }
    }
    if (!report.note.empty()) out << "# " << report.note << '\n';
  }
}

// --- Prediction artifacts --------------------------------------------------------

std::vector<UnitPrediction> predict_units(const FittedJointModel& model,
                                          const SiteDataset& test_site,
                                          double alpha,
                                          const std::vector<double>& dts,
                                          double t_max,
                                          const std::string& dir) {
  if (!dir.empty()) fs::create_directories(dir);
  std::vector<UnitPrediction> preds;
  for (const auto& unit : test_site.units) {
    TruncationResult trunc = truncate_at_fraction(unit, alpha);
    UnitPrediction p;
    p.site = unit.site_id;
    p.unit = unit.unit_id;
    p.event_indicator = unit.event_indicator;
    p.alpha = alpha;
    p.t_star = trunc.t_star;
    bool fell_back = false;
    Trajectory traj = model.trajectory_for(trunc.partial, &fell_back);
    p.adapt_fell_back = fell_back;
    MeanRulResult mrl =
        mean_rul(trunc.t_star, unit.covariates, traj, model.cox, t_max);
    p.est_rul = mrl.value;
    p.tail_survival = mrl.tail_survival;
    for (double dt : dts)
      p.est_f[dt] = failure_probability(trunc.t_star, dt, unit.covariates,
                                        traj, model.cox);

    if (!dir.empty()) {
      const std::string stem =
          dir + "/unit_" + std::to_string(unit.unit_id) + "_alpha" +
          std::to_string(alpha);
      {
        const int n = 200;
        Eigen::VectorXd grid(n);
        for (int i = 0; i < n; ++i)
          grid[i] = trunc.t_star +
                    (t_max - trunc.t_star) * i / static_cast<double>(n - 1);
        write_survival_csv(stem + "_survival.csv", trunc.t_star, grid,
                           unit.covariates, traj, model.cox);
      }
      if (model.has_mgp) {
        AdaptedUnit adapted =
            adapt_test_unit(trunc.partial, model.mgp, model.adapt);
        const int n = 300;
        const double hi = std::min(t_max, 2.0 * unit.event_time);
        Eigen::VectorXd grid(n);
        for (int i = 0; i < n; ++i)
          grid[i] = hi * i / static_cast<double>(n - 1);
        PredictResult pr = adapted.predictor.predict(grid);
        std::ofstream out(stem + "_trajectory.csv");
        out << "t,mean,lo95,hi95\n";
        for (int i = 0; i < n; ++i) {
          const double sd = std::sqrt(std::max(0.0, pr.var[i]));
          out << fmt17(grid[i]) << ',' << fmt17(pr.mean[i]) << ','
              << fmt17(pr.mean[i] - 1.96 * sd) << ','
              << fmt17(pr.mean[i] + 1.96 * sd) << '\n';
        }
      }
    }
    preds.push_back(std::move(p));
  }
  return preds;
}

void write_predictions_json(const std::vector<UnitPrediction>& preds,
                            const std::string& path) {
  json j;
  j["version"] = 1;
  j["units"] = json::array();
  for (const auto& p : preds) {
    json u;
    u["site"] = p.site;
    u["unit"] = p.unit;
    u["event_indicator"] = p.event_indicator;
    u["alpha"] = fmt17(p.alpha);
    u["t_star"] = fmt17(p.t_star);
    u["est_rul"] = fmt17(p.est_rul);
    u["tail_survival"] = fmt17(p.tail_survival);
    u["adapt_fell_back"] = p.adapt_fell_back;
    json f = json::object();
    for (const auto& [dt, v] : p.est_f) f[fmt17(dt)] = fmt17(v);
    u["est_f"] = std::move(f);
    j["units"].push_back(std::move(u));
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write predictions " + path);
  out << j.dump(1) << '\n';
}

std::vector<UnitPrediction> read_predictions_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open predictions " + path);
  json j = json::parse(in);
  std::vector<UnitPrediction> preds;
  for (const auto& u : j.at("units")) {
    UnitPrediction p;
    p.site = u.at("site").get<int>();
    p.unit = u.at("unit").get<int>();
    if (u.contains("event_indicator"))
      p.event_indicator = u.at("event_indicator").get<int>();
    p.alpha = std::strtod(u.at("alpha").get<std::string>().c_str(), nullptr);
    p.t_star = std::strtod(u.at("t_star").get<std::string>().c_str(), nullptr);
    p.est_rul =
        std::strtod(u.at("est_rul").get<std::string>().c_str(), nullptr);
    p.tail_survival = std::strtod(
        u.at("tail_survival").get<std::string>().c_str(), nullptr);
    p.adapt_fell_back = u.at("adapt_fell_back").get<bool>();
    for (const auto& [dt, v] : u.at("est_f").items())
      p.est_f[std::strtod(dt.c_str(), nullptr)] =
          std::strtod(v.get<std::string>().c_str(), nullptr);
    preds.push_back(std::move(p));
  }
  return preds;
}

}  // namespace fedprog
