#pragma once

#include "fedprog/data.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <vector>

namespace fedprog {

/// One engine's rows from the 26-column turbofan layout
/// (unit, cycle, 3 operational settings, 21 sensors).
struct CmapssUnitSeries {
  int id = 0;
  std::vector<int> cycles;
  Eigen::MatrixXd settings;  // n x 3
  Eigen::MatrixXd sensors;   // n x 21

  int ending_cycle() const {
    return cycles.empty() ? 0 : cycles.back();
  }
};

/// Parses the whitespace-separated layout; malformed rows raise with the
/// line number. Cycles must be contiguous from 1 within each unit.
std::vector<CmapssUnitSeries> parse_fd001(const std::string& path);

/// Sensor column by 1-based sensor index (file column 5 + index).
Eigen::VectorXd select_sensor(const CmapssUnitSeries& series,
                              int sensor_index);

/// Censoring rule: ending cycle beyond the threshold means right-censored at
/// the threshold (observations truncated there); ending at or before it is a
/// failure at the ending cycle.
struct CensorResult {
  double event_time = 0.0;
  int event_indicator = 1;
  int n_keep = 0;
};
CensorResult apply_censor_threshold(const CmapssUnitSeries& series,
                                    int threshold = 250);

struct CmapssIngest {
  std::vector<UnitRecord> units;       // unit ids dense from 0
  std::vector<int> raw_ending_cycle;   // pre-censoring run-to-failure cycle
  int sensor = 4;
  int threshold = 250;
};
CmapssIngest build_units(const std::vector<CmapssUnitSeries>& series,
                         int sensor, int threshold = 250);

/// Per-sensor standardization fitted on the training split.
struct Standardizer {
  double mean = 0.0;
  double sd = 1.0;
};
Standardizer fit_standardizer(const FleetDataset& fleet,
                              const std::vector<int>& site_ids);
void apply_standardizer(const Standardizer& st, FleetDataset* fleet);

/// Format-faithful synthetic file in the FD001 layout (100 units by
/// default), for running the pipeline where the NASA file is not available.
void write_fd001_fixture(const std::string& path, int n_units = 100,
                         std::uint64_t seed = 7);

}  // namespace fedprog
