#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fedprog/harness.hpp"

#include <filesystem>
#include <fstream>

using namespace fedprog;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

ExperimentConfig tiny_config() {
  ExperimentConfig cfg = desk_synth_profile(Scenario::I);
  cfg.methods = {"cen", "lmm"};
  cfg.units_per_site = 5;
  cfg.repeats = 1;
  cfg.alphas = {0.5};
  cfg.dts = {12.0};
  cfg.train.mgp_latent = 1;
  cfg.train.inducing_per_latent = 6;
  cfg.train.fed.R1 = 20;
  cfg.train.fed.E1 = 2;
  cfg.train.fed.R2 = 30;
  cfg.train.fed.E2 = 2;
  cfg.train.adapt.iterations = 40;
  return cfg;
}

}  // namespace

TEST_CASE("mae_mrl arithmetic") {
  CHECK(mae_mrl(vec({10, 20}), vec({10, 20})) == 0.0);
  CHECK(mae_mrl(vec({5, 5, 5}), vec({8, 8, 8})) == doctest::Approx(3.0));
  CHECK(mae_mrl(vec({10, 20}), vec({12, 17})) == doctest::Approx(2.5));
  CHECK_THROWS_AS(mae_mrl(vec({1.0}), vec({1.0, 2.0})),
                  std::invalid_argument);
}

TEST_CASE("mae_f arithmetic and range checks") {
  CHECK(mae_f(vec({0.2, 0.4}), vec({0.2, 0.4})) == 0.0);
  CHECK(mae_f(vec({0.2, 0.4}), vec({0.3, 0.3})) == doctest::Approx(0.1));
  // symmetric in its arguments
  CHECK(mae_f(vec({0.3, 0.3}), vec({0.2, 0.4})) == doctest::Approx(0.1));
  CHECK_THROWS_AS(mae_f(vec({1.2}), vec({0.5})), std::invalid_argument);
  CHECK_THROWS_AS(mae_f(vec({0.5}), vec({-0.1})), std::invalid_argument);
}

TEST_CASE("experiment determinism: identical reports for identical seeds") {
  ExperimentConfig cfg = tiny_config();
  MetricsReport a = run_experiment(cfg);
  MetricsReport b = run_experiment(cfg);
  REQUIRE(a.failures.empty());
  REQUIRE(b.failures.empty());
  for (const auto& m : cfg.methods) {
    for (double alpha : cfg.alphas) {
      CHECK(a.mrl.at(m).at(alpha).raw == b.mrl.at(m).at(alpha).raw);
      for (double dt : cfg.dts)
        CHECK(a.f.at(m).at(alpha).at(dt).raw ==
              b.f.at(m).at(alpha).at(dt).raw);
    }
  }
  CHECK(a.mrl.at("cen").at(0.5).raw.size() == 1);  // one raw value per cell
}

TEST_CASE("report JSON round-trip reproduces every cell") {
  ExperimentConfig cfg = tiny_config();
  MetricsReport report = run_experiment(cfg);
  const std::string path = "report_tmp.json";
  write_report_json(report, path);
  MetricsReport back = read_report_json(path);
  CHECK(back.methods == report.methods);
  CHECK(back.repeats == report.repeats);
  for (const auto& m : report.methods) {
    for (double a : report.alphas) {
      CHECK(back.mrl.at(m).at(a).raw == report.mrl.at(m).at(a).raw);
      CHECK(back.mrl.at(m).at(a).mean == report.mrl.at(m).at(a).mean);
      for (double d : report.dts)
        CHECK(back.f.at(m).at(a).at(d).raw == report.f.at(m).at(a).at(d).raw);
    }
  }
  std::filesystem::remove(path);
}

TEST_CASE("emit_tables formats cells as mean (sd)") {
  MetricsReport report;
  report.methods = {"fed"};
  report.alphas = {0.3};
  report.dts = {12.0};
  report.repeats = 2;
  report.dataset = "synth";
  report.mrl["fed"][0.3].raw = {5.24, 8.62};
  report.f["fed"][0.3][12.0].raw = {0.02, 0.04};
  finalize_stats(&report);

  const std::string dir = "tables_tmp";
  emit_tables(report, "csv", dir);
  std::ifstream in(dir + "/table_mae_mrl.csv");
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  CHECK(header == "method,alpha=0.3");
  CHECK(row.find("fed,") == 0);
  CHECK(row.find("6.93 (") != std::string::npos);  // mean of 5.24 and 8.62
  std::filesystem::remove_all(dir);

  // an empty report still produces header-only files
  MetricsReport empty;
  empty.alphas = {0.3, 0.5};
  empty.dts = {12.0};
  emit_tables(empty, "csv", dir);
  std::ifstream in2(dir + "/table_mae_mrl.csv");
  std::getline(in2, header);
  CHECK(header == "method,alpha=0.3,alpha=0.5");
  std::string rest;
  CHECK_FALSE(std::getline(in2, rest));
  std::filesystem::remove_all(dir);
}

TEST_CASE("predictions JSON round-trip") {
  std::vector<UnitPrediction> preds(2);
  preds[0].site = 0;
  preds[0].unit = 3;
  preds[0].alpha = 0.3;
  preds[0].t_star = 14.0;
  preds[0].est_rul = 27.5;
  preds[0].est_f[12.0] = 0.07;
  preds[1].unit = 4;
  preds[1].est_f[12.0] = 0.11;
  const std::string path = "preds_tmp.json";
  write_predictions_json(preds, path);
  auto back = read_predictions_json(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].unit == 3);
  CHECK(back[0].est_rul == 27.5);
  CHECK(back[0].est_f.at(12.0) == 0.07);
  std::filesystem::remove(path);
}
