#pragma once

#include <Eigen/Core>

#include <string>
#include <vector>

namespace fedprog {

/// One asset: event time, event indicator, observation grid, signal values
/// and time-invariant covariates.
struct UnitRecord {
  int site_id = 0;
  int unit_id = 0;
  double event_time = 0.0;      // V
  int event_indicator = 1;      // delta: 1 failed, 0 censored
  Eigen::VectorXd timestamps;   // strictly increasing, all <= event_time
  Eigen::VectorXd signal;       // same length as timestamps
  Eigen::VectorXd covariates;   // possibly empty

  Eigen::Index n_obs() const { return timestamps.size(); }
};

struct SiteDataset {
  int site_id = 0;
  std::vector<UnitRecord> units;

  int unit_count() const { return static_cast<int>(units.size()); }
  Eigen::Index n_obs() const;
};

struct FleetDataset {
  std::vector<SiteDataset> sites;

  int total_units() const;
  Eigen::Index total_obs() const;
  const SiteDataset& site(int site_id) const;
};

struct ValidationReport {
  bool pass = true;
  std::vector<std::string> violations;
};

/// Checks every UnitRecord invariant; report-based, never throws.
ValidationReport validate(const FleetDataset& fleet);
ValidationReport validate_unit(const UnitRecord& unit);

/// alpha-truncation: t_star is the smallest timestamp >= alpha * V; the
/// partial record keeps observations with t <= t_star. Throws if alpha is
/// outside (0, 1] or alpha * V exceeds the last timestamp.
struct TruncationResult {
  double t_star = 0.0;
  UnitRecord partial;
};
TruncationResult truncate_at_fraction(const UnitRecord& unit, double alpha);

/// Random disjoint seeded partition of `units` into sites sized per
/// `site_sizes` (site ids 0..n-1; site 0 is the test site by convention).
/// Unassigned units are dropped. Throws if sizes exceed the unit count.
FleetDataset assign_sites(const std::vector<UnitRecord>& units,
                          const std::vector<int>& site_sizes,
                          std::uint64_t rng_seed);

// --- CSV interchange -------------------------------------------------------
// One CSV per site, long format:
//   unit_id,event_time,event_indicator,covariates,timestamp,signal
// with covariates serialized as a quoted JSON array. A JSON manifest lists
// the per-site files.

void write_fleet_csv(const FleetDataset& fleet, const std::string& dir,
                     const std::string& manifest_name = "fleet.json");
FleetDataset read_fleet_csv(const std::string& manifest_path);

}  // namespace fedprog
