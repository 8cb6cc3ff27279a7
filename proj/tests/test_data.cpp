#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fedprog/data.hpp"

#include <filesystem>
#include <random>

using namespace fedprog;

namespace {

UnitRecord make_unit(std::vector<double> t, std::vector<double> y, double v,
                     int delta = 1) {
  UnitRecord u;
  u.event_time = v;
  u.event_indicator = delta;
  u.timestamps =
      Eigen::Map<Eigen::VectorXd>(t.data(), static_cast<Eigen::Index>(t.size()));
  u.signal =
      Eigen::Map<Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
  return u;
}

FleetDataset fleet_of(std::vector<UnitRecord> units) {
  FleetDataset fleet;
  SiteDataset site;
  for (auto& u : units) site.units.push_back(std::move(u));
  fleet.sites.push_back(std::move(site));
  return fleet;
}

}  // namespace

TEST_CASE("validate: constructed unit passes") {
  auto fleet = fleet_of({make_unit({1, 2, 3}, {0.1, 0.2, 0.3}, 3.0)});
  auto rep = validate(fleet);
  CHECK(rep.pass);
  CHECK(rep.violations.empty());
}

TEST_CASE("validate: non-increasing timestamps fail") {
  auto fleet = fleet_of({make_unit({1, 3, 2}, {0, 0, 0}, 3.0)});
  auto rep = validate(fleet);
  CHECK_FALSE(rep.pass);
  REQUIRE(rep.violations.size() == 1);
  CHECK(rep.violations[0].find("timestamps not increasing") !=
        std::string::npos);
}

TEST_CASE("validate: timestamp beyond event time fails") {
  auto fleet = fleet_of({make_unit({1, 2, 5}, {0, 0, 0}, 3.0)});
  auto rep = validate(fleet);
  CHECK_FALSE(rep.pass);
  CHECK(rep.violations[0].find("timestamp exceeds event time") !=
        std::string::npos);
}

TEST_CASE("truncate_at_fraction on the even grid") {
  std::vector<double> t, y;
  for (int i = 1; i <= 120; ++i) {
    t.push_back(2.0 * i);
    y.push_back(0.0);
  }
  UnitRecord u = make_unit(t, y, 100.0);

  auto res = truncate_at_fraction(u, 0.3);
  CHECK(res.t_star == 30.0);
  CHECK(res.partial.timestamps.size() == 15);
  CHECK(res.partial.timestamps[14] == res.t_star);

  UnitRecord u2 = u;
  u2.event_time = 101.0;
  auto res2 = truncate_at_fraction(u2, 0.5);
  CHECK(res2.t_star == 52.0);
}

TEST_CASE("truncate at alpha = 1 with on-grid event time is the identity") {
  UnitRecord u = make_unit({1, 2, 3}, {5, 6, 7}, 3.0);
  auto res = truncate_at_fraction(u, 1.0);
  CHECK(res.t_star == 3.0);
  CHECK(res.partial.timestamps.size() == 3);
  CHECK(res.partial.signal[2] == 7.0);
}

TEST_CASE("truncate errors: bad fraction and beyond-window") {
  UnitRecord u = make_unit({1, 2, 3}, {0, 0, 0}, 3.0);
  CHECK_THROWS_AS(truncate_at_fraction(u, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(truncate_at_fraction(u, 1.5), std::invalid_argument);
  UnitRecord v = make_unit({1, 2, 3}, {0, 0, 0}, 3.5);
  CHECK_THROWS_AS(truncate_at_fraction(v, 1.0), std::runtime_error);
}

TEST_CASE("truncation is nested across fractions") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> ua(0.05, 1.0);
  std::vector<double> t, y;
  for (int i = 1; i <= 57; ++i) {
    t.push_back(i * 1.7);
    y.push_back(i);
  }
  UnitRecord u = make_unit(t, y, 57 * 1.7);
  for (int trial = 0; trial < 200; ++trial) {
    double a1 = ua(rng), a2 = ua(rng);
    if (a1 > a2) std::swap(a1, a2);
    auto r1 = truncate_at_fraction(u, a1);
    auto r2 = truncate_at_fraction(u, a2);
    CHECK(r1.t_star <= r2.t_star);
    CHECK(r1.partial.timestamps.size() <= r2.partial.timestamps.size());
  }
}

TEST_CASE("assign_sites: disjoint, leftover dropped, deterministic") {
  std::vector<UnitRecord> units;
  for (int i = 0; i < 100; ++i) {
    UnitRecord u = make_unit({1, 2}, {0.5, 0.6}, 2.0);
    u.unit_id = i;
    units.push_back(u);
  }
  auto f1 = assign_sites(units, {20, 20, 20}, 7);
  REQUIRE(f1.sites.size() == 3);
  std::set<int> seen;
  for (const auto& s : f1.sites) {
    CHECK(s.unit_count() == 20);
    for (const auto& u : s.units) CHECK(seen.insert(u.unit_id).second);
  }
  CHECK(seen.size() == 60);

  auto f2 = assign_sites(units, {20, 20, 20}, 7);
  for (std::size_t k = 0; k < 3; ++k)
    for (int m = 0; m < 20; ++m)
      CHECK(f1.sites[k].units[m].unit_id == f2.sites[k].units[m].unit_id);

  auto all = assign_sites(units, {100}, 3);
  CHECK(all.sites[0].unit_count() == 100);

  CHECK_THROWS_AS(assign_sites(units, {80, 30}, 1), std::invalid_argument);
}

TEST_CASE("fleet CSV round-trip preserves values and structure") {
  std::vector<UnitRecord> units;
  std::mt19937_64 rng(13);
  std::normal_distribution<double> n01;
  FleetDataset fleet;
  for (int s = 0; s < 2; ++s) {
    SiteDataset site;
    site.site_id = s;
    for (int m = 0; m < 3; ++m) {
      UnitRecord u;
      u.site_id = s;
      u.unit_id = m;
      u.event_time = 10.0 + n01(rng);
      u.event_indicator = m % 2;
      const int len = 4 + m;
      u.timestamps.resize(len);
      u.signal.resize(len);
      for (int l = 0; l < len; ++l) {
        u.timestamps[l] = l + 0.25 * s;
        u.signal[l] = n01(rng);
      }
      u.covariates = Eigen::VectorXd::Constant(1, n01(rng));
      site.units.push_back(std::move(u));
    }
    fleet.sites.push_back(std::move(site));
  }

  const std::string dir = "csv_roundtrip_tmp";
  write_fleet_csv(fleet, dir);
  FleetDataset back = read_fleet_csv(dir + "/fleet.json");
  REQUIRE(back.sites.size() == fleet.sites.size());
  for (std::size_t s = 0; s < fleet.sites.size(); ++s) {
    REQUIRE(back.sites[s].units.size() == fleet.sites[s].units.size());
    for (std::size_t m = 0; m < fleet.sites[s].units.size(); ++m) {
      const auto& a = fleet.sites[s].units[m];
      const auto& b = back.sites[s].units[m];
      CHECK(a.unit_id == b.unit_id);
      CHECK(a.event_time == b.event_time);  // bit-exact via 17 digits
      CHECK(a.event_indicator == b.event_indicator);
      REQUIRE(a.timestamps.size() == b.timestamps.size());
      for (Eigen::Index l = 0; l < a.timestamps.size(); ++l) {
        CHECK(a.timestamps[l] == b.timestamps[l]);
        CHECK(a.signal[l] == b.signal[l]);
      }
      REQUIRE(a.covariates.size() == b.covariates.size());
      for (Eigen::Index l = 0; l < a.covariates.size(); ++l)
        CHECK(a.covariates[l] == b.covariates[l]);
    }
  }
  std::filesystem::remove_all(dir);
}
