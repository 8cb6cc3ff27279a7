#pragma once

#include "fedprog/baselines.hpp"
#include "fedprog/cmapss.hpp"
#include "fedprog/synthgen.hpp"

#include <map>
#include <string>
#include <vector>

namespace fedprog {

/// Mean absolute error between true and estimated mean RULs.
double mae_mrl(const Eigen::VectorXd& true_rul,
               const Eigen::VectorXd& est_rul);

/// Mean absolute error between failure probabilities (inputs in [0, 1]).
double mae_f(const Eigen::VectorXd& true_f, const Eigen::VectorXd& est_f);

struct ExperimentConfig {
  std::vector<std::string> methods{"fed", "cen", "ind", "lmm"};
  std::string dataset = "synth";  // synth | cmapss

  // synth
  Scenario scenario = Scenario::I;
  int n_sites = 3;
  int units_per_site = 10;

  // cmapss
  std::string cmapss_path;
  int cmapss_sensor = 4;
  int cmapss_threshold = 250;
  std::vector<int> cmapss_site_sizes{20, 20, 20};

  std::vector<double> alphas{0.3, 0.5, 0.7};
  std::vector<double> dts{12, 15, 18};
  int repeats = 5;
  std::uint64_t seed = 1;
  TrainOptions train;
  std::string transport = "loopback";
  int test_site = 0;
  int ind_training_site = 1;
  double tmax_factor = 5.0;
  int workers = 1;
  std::string outdir;
};

/// Tuned presets: "desk" shrinks units/repeats/rounds; "paper" mirrors the
/// full experimental shape.
ExperimentConfig desk_synth_profile(Scenario scenario);
ExperimentConfig paper_synth_profile(Scenario scenario);
ExperimentConfig desk_cmapss_profile(const std::string& path, int sensor);

struct CellStats {
  double mean = 0.0;
  double sd = 0.0;
  std::vector<double> raw;
};

struct MetricsReport {
  std::vector<std::string> methods;
  std::vector<double> alphas;
  std::vector<double> dts;
  int repeats = 0;
  std::string dataset;
  std::string note;  // e.g. reference-relative MAE_F footer for cmapss
  // method -> alpha -> stats
  std::map<std::string, std::map<double, CellStats>> mrl;
  // method -> alpha -> dt -> stats
  std::map<std::string, std::map<double, std::map<double, CellStats>>> f;
  double runtime_seconds = 0.0;
  std::vector<std::string> failures;  // recorded per-repeat errors

  bool complete() const { return failures.empty(); }
};

void finalize_stats(MetricsReport* report);

MetricsReport run_experiment(const ExperimentConfig& cfg);

void write_report_json(const MetricsReport& report, const std::string& path);
MetricsReport read_report_json(const std::string& path);

/// One CSV per metric table, cells "mean (sd)", plus the machine-readable
/// JSON when format == "json".
void emit_tables(const MetricsReport& report, const std::string& format,
                 const std::string& dir);

// --- Per-unit prediction artifacts ---------------------------------------------

struct UnitPrediction {
  int site = 0;
  int unit = 0;
  int event_indicator = 1;
  double alpha = 0.0;
  double t_star = 0.0;
  double est_rul = 0.0;
  double tail_survival = 0.0;
  bool adapt_fell_back = false;
  std::map<double, double> est_f;  // dt -> probability
};

/// Predictions for every unit of the test site at one alpha; also emits
/// survival-curve and trajectory plot data (95% bands) when dir is nonempty.
std::vector<UnitPrediction> predict_units(const FittedJointModel& model,
                                          const SiteDataset& test_site,
                                          double alpha,
                                          const std::vector<double>& dts,
                                          double t_max,
                                          const std::string& dir = "");

void write_predictions_json(const std::vector<UnitPrediction>& preds,
                            const std::string& path);
std::vector<UnitPrediction> read_predictions_json(const std::string& path);

}  // namespace fedprog
