// Command-line driver: dataset generation, ingestion, training, prediction
// and the experiment harness.

#include <CLI11.hpp>
#include <json.hpp>

#include "fedprog/harness.hpp"
#include "fedprog/num_format.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

using namespace fedprog;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

Scenario parse_scenario(const std::string& s) {
  if (s == "I" || s == "i" || s == "1") return Scenario::I;
  if (s == "II" || s == "ii" || s == "2") return Scenario::II;
  throw CLI::ValidationError("scenario must be I or II");
}

FedConfig::Optimizer parse_optimizer(const std::string& s) {
  if (s == "gd") return FedConfig::Optimizer::GD;
  if (s == "adam") return FedConfig::Optimizer::Adam;
  throw CLI::ValidationError("optimizer must be gd or adam");
}

void apply_config_file(const std::string& path, ExperimentConfig* cfg) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  json j = json::parse(in);
  if (j.contains("methods"))
    cfg->methods = j["methods"].get<std::vector<std::string>>();
  if (j.contains("dataset")) cfg->dataset = j["dataset"].get<std::string>();
  if (j.contains("scenario"))
    cfg->scenario = parse_scenario(j["scenario"].get<std::string>());
  if (j.contains("n_sites")) cfg->n_sites = j["n_sites"].get<int>();
  if (j.contains("units_per_site"))
    cfg->units_per_site = j["units_per_site"].get<int>();
  if (j.contains("cmapss_path"))
    cfg->cmapss_path = j["cmapss_path"].get<std::string>();
  if (j.contains("cmapss_sensor"))
    cfg->cmapss_sensor = j["cmapss_sensor"].get<int>();
  if (j.contains("alphas")) cfg->alphas = j["alphas"].get<std::vector<double>>();
  if (j.contains("dts")) cfg->dts = j["dts"].get<std::vector<double>>();
  if (j.contains("repeats")) cfg->repeats = j["repeats"].get<int>();
  if (j.contains("seed")) cfg->seed = j["seed"].get<std::uint64_t>();
  if (j.contains("transport"))
    cfg->transport = j["transport"].get<std::string>();
  if (j.contains("workers")) cfg->workers = j["workers"].get<int>();
  if (j.contains("ind_training_site"))
    cfg->ind_training_site = j["ind_training_site"].get<int>();
  if (j.contains("fed")) {
    const json& f = j["fed"];
    FedConfig& fc = cfg->train.fed;
    if (f.contains("eta1")) fc.eta1 = f["eta1"].get<double>();
    if (f.contains("eta2")) fc.eta2 = f["eta2"].get<double>();
    if (f.contains("E1")) fc.E1 = f["E1"].get<int>();
    if (f.contains("E2")) fc.E2 = f["E2"].get<int>();
    if (f.contains("R1")) fc.R1 = f["R1"].get<int>();
    if (f.contains("R2")) fc.R2 = f["R2"].get<int>();
    if (f.contains("optimizer"))
      fc.optimizer = parse_optimizer(f["optimizer"].get<std::string>());
    if (f.contains("early_stop_tol"))
      fc.early_stop_tol = f["early_stop_tol"].get<double>();
  }
  if (j.contains("baseline")) {
    cfg->train.baseline_kind =
        j["baseline"].get<std::string>() == "exponential"
            ? BaselineHazard::Kind::Exponential
            : BaselineHazard::Kind::Weibull;
  }
}

FleetDataset training_subset(const FleetDataset& fleet, int test_site) {
  FleetDataset out;
  for (const auto& s : fleet.sites)
    if (s.site_id != test_site) out.sites.push_back(s);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Federated joint modeling of degradation signals and failure events"};
  app.require_subcommand(1);

  std::uint64_t seed = 1;
  app.add_option("--seed", seed, "global RNG seed")->capture_default_str();

  // --- synth ----------------------------------------------------------------
  auto* synth = app.add_subcommand("synth", "generate a synthetic fleet");
  std::string synth_out = "synth_data";
  std::string synth_scenario = "I";
  int synth_sites = 3, synth_units = 20;
  double synth_censor = 0.05;
  synth->add_option("--out", synth_out, "output directory")
      ->capture_default_str();
  synth->add_option("--scenario", synth_scenario, "I or II")
      ->capture_default_str();
  synth->add_option("--sites", synth_sites, "number of sites (site 0 = test)")
      ->capture_default_str();
  synth->add_option("--units", synth_units, "units per site")
      ->capture_default_str();
  synth->add_option("--censor-fraction", synth_censor, "censored share")
      ->capture_default_str();
  synth->callback([&]() {
    SynthConfig cfg;
    cfg.scenario = parse_scenario(synth_scenario);
    cfg.n_sites = synth_sites;
    cfg.units_per_site = synth_units;
    cfg.censor_fraction = synth_censor;
    cfg.seed = seed;
    SynthFleet data = generate_fleet(cfg);
    write_fleet_csv(data.fleet, synth_out);
    write_truth_sidecar(data, synth_out + "/truth.json");
    std::cout << "wrote " << data.fleet.total_units() << " units to "
              << synth_out << "\n";
  });

  // --- ingest-cmapss ----------------------------------------------------------
  auto* ingest = app.add_subcommand(
      "ingest-cmapss", "convert a turbofan file to the fleet CSV format");
  std::string in_path, ingest_out = "cmapss_data";
  int sensor = 4, threshold = 250;
  std::vector<int> split_sizes{20, 20, 20};
  ingest->add_option("--input", in_path, "path to train_FD001.txt")
      ->required();
  ingest->add_option("--sensor", sensor, "sensor index 1..21")
      ->capture_default_str();
  ingest->add_option("--threshold", threshold, "censoring cycle threshold")
      ->capture_default_str();
  ingest->add_option("--splits", split_sizes,
                     "site sizes, first entry is the test site")
      ->capture_default_str();
  ingest->add_option("--out", ingest_out, "output directory")
      ->capture_default_str();
  ingest->callback([&]() {
    auto series = parse_fd001(in_path);
    CmapssIngest data = build_units(series, sensor, threshold);
    FleetDataset fleet = assign_sites(data.units, split_sizes, seed);
    write_fleet_csv(fleet, ingest_out);
    json truth;
    truth["version"] = 1;
    truth["sensor"] = sensor;
    truth["threshold"] = threshold;
    truth["raw_ending_cycle"] = data.raw_ending_cycle;
    std::ofstream tf(ingest_out + "/truth.json");
    tf << truth.dump(1) << '\n';
    std::cout << "wrote " << fleet.total_units() << " of "
              << data.units.size() << " units to " << ingest_out << "\n";
  });

  // --- synth-cmapss-fixture -----------------------------------------------------
  auto* fixture = app.add_subcommand(
      "synth-cmapss-fixture",
      "write a synthetic file in the 26-column turbofan layout");
  std::string fixture_out = "fixture_fd001.txt";
  int fixture_units = 100;
  fixture->add_option("--out", fixture_out, "output path")
      ->capture_default_str();
  fixture->add_option("--units", fixture_units, "unit count")
      ->capture_default_str();
  fixture->callback([&]() {
    write_fd001_fixture(fixture_out, fixture_units, seed);
    std::cout << "wrote " << fixture_units << " units to " << fixture_out
              << "\n";
  });

  // --- train -------------------------------------------------------------------
  auto* train = app.add_subcommand("train", "fit a joint model");
  std::string data_manifest, model_out = "model.json", method = "fed";
  std::string transport_name = "loopback", optimizer = "adam";
  std::string baseline = "weibull";
  int test_site = 0, train_site = 1;
  double eta1 = 0.03, eta2 = 0.1;
  int e1 = 5, r1 = 160, e2 = 5, r2 = 120;
  std::string round_log_dir;
  train->add_option("--data", data_manifest, "fleet manifest JSON")
      ->required();
  train->add_option("--method", method, "fed|cen|ind|lmm")
      ->capture_default_str();
  train->add_option("--transport", transport_name, "loopback|stream")
      ->capture_default_str();
  train->add_option("--out", model_out, "model output path")
      ->capture_default_str();
  train->add_option("--test-site", test_site, "held-out site id")
      ->capture_default_str();
  train->add_option("--train-site", train_site, "training site for ind/lmm")
      ->capture_default_str();
  train->add_option("--baseline", baseline, "weibull|exponential")
      ->capture_default_str();
  train->add_option("--optimizer", optimizer, "gd|adam")
      ->capture_default_str();
  train->add_option("--eta1", eta1)->capture_default_str();
  train->add_option("--eta2", eta2)->capture_default_str();
  train->add_option("--e1", e1)->capture_default_str();
  train->add_option("--r1", r1)->capture_default_str();
  train->add_option("--e2", e2)->capture_default_str();
  train->add_option("--r2", r2)->capture_default_str();
  train->add_option("--round-log", round_log_dir,
                    "directory for per-round aggregate logs");
  train->callback([&]() {
    FleetDataset fleet = read_fleet_csv(data_manifest);
    FleetDataset training = training_subset(fleet, test_site);
    TrainOptions opts;
    opts.baseline_kind = baseline == "exponential"
                             ? BaselineHazard::Kind::Exponential
                             : BaselineHazard::Kind::Weibull;
    opts.fed.optimizer = parse_optimizer(optimizer);
    opts.fed.eta1 = eta1;
    opts.fed.eta2 = eta2;
    opts.fed.E1 = e1;
    opts.fed.R1 = r1;
    opts.fed.E2 = e2;
    opts.fed.R2 = r2;

    FittedJointModel model;
    if (method == "fed") {
      std::vector<int> site_ids;
      for (const auto& s : training.sites) site_ids.push_back(s.site_id);
      auto transport = make_transport(transport_name, site_ids);
      if (!round_log_dir.empty()) fs::create_directories(round_log_dir);
      model = train_fed_joint(training, opts, *transport, round_log_dir);
    } else if (method == "cen") {
      model = train_cen_joint(training, opts);
    } else if (method == "ind") {
      model = train_ind_joint(training.site(train_site), opts);
    } else if (method == "lmm") {
      model = train_lmm_joint(training.site(train_site), opts);
    } else {
      throw CLI::ValidationError("method must be fed|cen|ind|lmm");
    }
    save_model(model, model_out);
    std::cout << "trained " << method << " model -> " << model_out << "\n";
  });

  // --- predict -------------------------------------------------------------------
  auto* predict = app.add_subcommand(
      "predict", "predict RUL and failure probabilities for the test site");
  std::string model_path, pred_data, pred_out = "predictions";
  double alpha = 0.5;
  std::vector<double> dts{12, 15, 18};
  double tmax = 0.0;
  int pred_test_site = 0;
  predict->add_option("--model", model_path)->required();
  predict->add_option("--data", pred_data, "fleet manifest JSON")->required();
  predict->add_option("--alpha", alpha, "observed fraction")
      ->capture_default_str();
  predict->add_option("--dt", dts, "prediction horizons")
      ->capture_default_str();
  predict->add_option("--tmax", tmax, "integration horizon (0: 5x max event)")
      ->capture_default_str();
  predict->add_option("--test-site", pred_test_site)->capture_default_str();
  predict->add_option("--out", pred_out, "output directory")
      ->capture_default_str();
  predict->callback([&]() {
    FittedJointModel model = load_model(model_path);
    FleetDataset fleet = read_fleet_csv(pred_data);
    const SiteDataset& test = fleet.site(pred_test_site);
    double horizon = tmax;
    if (horizon <= 0.0) {
      double max_event = 0.0;
      for (const auto& s : fleet.sites)
        for (const auto& u : s.units)
          max_event = std::max(max_event, u.event_time);
      horizon = 5.0 * max_event;
    }
    fs::create_directories(pred_out);
    auto preds = predict_units(model, test, alpha, dts, horizon, pred_out);
    write_predictions_json(preds, pred_out + "/predictions.json");
    std::cout << "wrote " << preds.size() << " unit predictions to "
              << pred_out << "\n";
  });

  // --- evaluate -------------------------------------------------------------------
  auto* evaluate = app.add_subcommand(
      "evaluate", "score predictions against the synthetic truth sidecar");
  std::string eval_preds, eval_truth, eval_out = "metrics.json";
  evaluate->add_option("--pred", eval_preds, "predictions.json")->required();
  evaluate->add_option("--truth", eval_truth, "truth sidecar JSON")
      ->required();
  evaluate->add_option("--out", eval_out)->capture_default_str();
  evaluate->callback([&]() {
    auto preds = read_predictions_json(eval_preds);
    SynthConfig scfg;  // canonical truth parameters
    auto truth = read_truth_sidecar(eval_truth, scfg);
    auto find_truth = [&](int site, int unit) -> const TrueModel& {
      for (const auto& tm : truth)
        if (tm.site_id == site && tm.unit_id == unit) return tm;
      throw std::runtime_error("missing truth for unit");
    };
    std::vector<double> tr, er;
    std::map<double, std::pair<std::vector<double>, std::vector<double>>>
        fmap;
    for (const auto& p : preds) {
      if (p.event_indicator == 0) continue;  // no identified true RUL
      const TrueModel& tm = find_truth(p.site, p.unit);
      tr.push_back(tm.sampled_failure_time - p.t_star);
      er.push_back(p.est_rul);
      Trajectory true_traj = tm.trajectory(1e6);
      for (const auto& [dt, est] : p.est_f) {
        fmap[dt].first.push_back(failure_probability(
            p.t_star, dt, tm.covariate, true_traj, tm.cox));
        fmap[dt].second.push_back(est);
      }
    }
    auto to_vec = [](const std::vector<double>& v) {
      return Eigen::Map<const Eigen::VectorXd>(
                 v.data(), static_cast<Eigen::Index>(v.size()))
          .eval();
    };
    json out;
    out["mae_mrl"] = fmt17(mae_mrl(to_vec(tr), to_vec(er)));
    json jf = json::object();
    for (const auto& [dt, pair] : fmap)
      jf[fmt17(dt)] = fmt17(mae_f(to_vec(pair.first), to_vec(pair.second)));
    out["mae_f"] = std::move(jf);
    out["units"] = preds.size();
    std::ofstream os(eval_out);
    os << out.dump(1) << '\n';
    std::cout << "MAE_mrl = " << out["mae_mrl"].get<std::string>() << " -> "
              << eval_out << "\n";
  });

  // --- experiment -----------------------------------------------------------------
  auto* experiment = app.add_subcommand(
      "experiment", "repeated randomized comparison of the methods");
  std::string profile = "desk-synth-i";
  std::string config_path, exp_out = "experiment_out";
  int repeats_override = -1, units_override = -1;
  std::vector<std::string> methods_override;
  std::string exp_cmapss_path;
  experiment->add_option("--profile", profile,
                         "desk-synth-i|desk-synth-ii|paper-synth-i|"
                         "paper-synth-ii|desk-cmapss")
      ->capture_default_str();
  experiment->add_option("--config", config_path, "JSON config overrides");
  experiment->add_option("--outdir", exp_out)->capture_default_str();
  experiment->add_option("--repeats", repeats_override);
  experiment->add_option("--units", units_override, "units per site");
  experiment->add_option("--methods", methods_override);
  experiment->add_option("--cmapss-path", exp_cmapss_path,
                         "turbofan data file for the desk-cmapss profile");
  experiment->callback([&]() {
    ExperimentConfig cfg;
    if (profile == "desk-synth-i")
      cfg = desk_synth_profile(Scenario::I);
    else if (profile == "desk-synth-ii")
      cfg = desk_synth_profile(Scenario::II);
    else if (profile == "paper-synth-i")
      cfg = paper_synth_profile(Scenario::I);
    else if (profile == "paper-synth-ii")
      cfg = paper_synth_profile(Scenario::II);
    else if (profile == "desk-cmapss")
      cfg = desk_cmapss_profile(exp_cmapss_path, 4);
    else
      throw CLI::ValidationError("unknown profile " + profile);
    if (!config_path.empty()) apply_config_file(config_path, &cfg);
    if (!exp_cmapss_path.empty()) cfg.cmapss_path = exp_cmapss_path;
    if (repeats_override > 0) cfg.repeats = repeats_override;
    if (units_override > 0) cfg.units_per_site = units_override;
    if (!methods_override.empty()) cfg.methods = methods_override;
    cfg.seed = seed;
    cfg.outdir = exp_out;
    MetricsReport report = run_experiment(cfg);
    std::cout << "experiment finished in " << report.runtime_seconds
              << " s; metrics in " << exp_out << "\n";
    for (const auto& fail : report.failures)
      std::cerr << "incomplete: " << fail << "\n";
  });

  // --- emit-tables -----------------------------------------------------------------
  auto* tables =
      app.add_subcommand("emit-tables", "render metric tables from a report");
  std::string report_path, table_format = "csv", tables_out = "tables";
  tables->add_option("--report", report_path, "metrics.json")->required();
  tables->add_option("--format", table_format, "csv|json")
      ->capture_default_str();
  tables->add_option("--out", tables_out)->capture_default_str();
  tables->callback([&]() {
    MetricsReport report = read_report_json(report_path);
    emit_tables(report, table_format, tables_out);
    std::cout << "tables written to " << tables_out << "\n";
  });

  CLI11_PARSE(app, argc, argv);
  return 0;
}
