#include "fedprog/data.hpp"

#include <json.hpp>

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace fedprog {

namespace fs = std::filesystem;
using nlohmann::json;

Eigen::Index SiteDataset::n_obs() const {
  Eigen::Index n = 0;
  for (const auto& u : units) n += u.n_obs();
  return n;
}

int FleetDataset::total_units() const {
  int n = 0;
  for (const auto& s : sites) n += s.unit_count();
  return n;
}

Eigen::Index FleetDataset::total_obs() const {
  Eigen::Index n = 0;
  for (const auto& s : sites) n += s.n_obs();
  return n;
}

const SiteDataset& FleetDataset::site(int site_id) const {
  for (const auto& s : sites)
    if (s.site_id == site_id) return s;
  throw std::invalid_argument("no such site id " + std::to_string(site_id));
}

ValidationReport validate_unit(const UnitRecord& unit) {
  ValidationReport rep;
  auto fail = [&](const std::string& msg) {
    rep.pass = false;
    rep.violations.push_back("site " + std::to_string(unit.site_id) +
                             " unit " + std::to_string(unit.unit_id) + ": " +
                             msg);
  };
  if (unit.event_time < 0.0) fail("negative event time");
  if (unit.event_indicator != 0 && unit.event_indicator != 1)
    fail("event indicator not in {0,1}");
  if (unit.timestamps.size() != unit.signal.size())
    fail("timestamp/signal length mismatch");
  for (Eigen::Index l = 0; l < unit.timestamps.size(); ++l) {
    if (unit.timestamps[l] < 0.0) {
      fail("negative timestamp");
      break;
    }
  }
  for (Eigen::Index l = 1; l < unit.timestamps.size(); ++l) {
    if (!(unit.timestamps[l] > unit.timestamps[l - 1])) {
      fail("timestamps not increasing");
      break;
    }
  }
  if (unit.timestamps.size() > 0 &&
      unit.timestamps[unit.timestamps.size() - 1] > unit.event_time)
    fail("timestamp exceeds event time");
  return rep;
}

ValidationReport validate(const FleetDataset& fleet) {
  ValidationReport rep;
  for (const auto& site : fleet.sites) {
    for (const auto& unit : site.units) {
      if (unit.site_id != site.site_id) {
        rep.pass = false;
        rep.violations.push_back("unit " + std::to_string(unit.unit_id) +
                                 " carries site id " +
                                 std::to_string(unit.site_id) +
                                 " inside site " +
                                 std::to_string(site.site_id));
      }
      ValidationReport u = validate_unit(unit);
      if (!u.pass) {
        rep.pass = false;
        rep.violations.insert(rep.violations.end(), u.violations.begin(),
                              u.violations.end());
      }
    }
  }
  return rep;
}

TruncationResult truncate_at_fraction(const UnitRecord& unit, double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0))
    throw std::invalid_argument("fraction must lie in (0, 1]");
  if (unit.timestamps.size() == 0)
    throw std::invalid_argument("unit has no observations");
  const double target = alpha * unit.event_time;
  const Eigen::Index n = unit.timestamps.size();
  Eigen::Index idx = -1;
  for (Eigen::Index l = 0; l < n; ++l) {
    if (unit.timestamps[l] >= target) {
      idx = l;
      break;
    }
  }
  if (idx < 0) throw std::runtime_error("fraction beyond observation window");
  TruncationResult res;
  res.t_star = unit.timestamps[idx];
  res.partial = unit;
  res.partial.timestamps = unit.timestamps.head(idx + 1);
  res.partial.signal = unit.signal.head(idx + 1);
  return res;
}

FleetDataset assign_sites(const std::vector<UnitRecord>& units,
                          const std::vector<int>& site_sizes,
                          std::uint64_t rng_seed) {
  const int total_needed =
      std::accumulate(site_sizes.begin(), site_sizes.end(), 0);
  if (total_needed > static_cast<int>(units.size()))
    throw std::invalid_argument("insufficient units for requested site sizes");
  std::vector<int> order(units.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(rng_seed);
  std::shuffle(order.begin(), order.end(), rng);

  FleetDataset fleet;
  int cursor = 0;
  for (std::size_t s = 0; s < site_sizes.size(); ++s) {
    SiteDataset site;
    site.site_id = static_cast<int>(s);
    for (int i = 0; i < site_sizes[s]; ++i) {
      UnitRecord u = units[order[cursor++]];
      u.site_id = site.site_id;
      site.units.push_back(std::move(u));
    }
    fleet.sites.push_back(std::move(site));
  }
  return fleet;
}

// --- CSV -------------------------------------------------------------------

namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string covariates_json(const Eigen::VectorXd& w) {
  std::string s = "[";
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    if (i) s += ",";
    s += fmt17(w[i]);
  }
  s += "]";
  return s;
}

// Minimal CSV field splitter with double-quote support.
std::vector<std::string> split_csv_row(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

}  // namespace

void write_fleet_csv(const FleetDataset& fleet, const std::string& dir,
                     const std::string& manifest_name) {
  fs::create_directories(dir);
  json manifest;
  manifest["version"] = 1;
  manifest["sites"] = json::array();
  for (const auto& site : fleet.sites) {
    const std::string fname = "site_" + std::to_string(site.site_id) + ".csv";
    std::ofstream out(fs::path(dir) / fname);
    if (!out) throw std::runtime_error("cannot write " + fname);
    out << "unit_id,event_time,event_indicator,covariates,timestamp,signal\n";
    for (const auto& u : site.units) {
      const std::string cov = '"' + covariates_json(u.covariates) + '"';
      for (Eigen::Index l = 0; l < u.n_obs(); ++l) {
        out << u.unit_id << ',' << fmt17(u.event_time) << ','
            << u.event_indicator << ',' << cov << ','
            << fmt17(u.timestamps[l]) << ',' << fmt17(u.signal[l]) << '\n';
      }
    }
    manifest["sites"].push_back({{"site_id", site.site_id}, {"path", fname}});
  }
  std::ofstream mf(fs::path(dir) / manifest_name);
  mf << manifest.dump(2) << '\n';
}

FleetDataset read_fleet_csv(const std::string& manifest_path) {
  std::ifstream mf(manifest_path);
  if (!mf) throw std::runtime_error("cannot open manifest " + manifest_path);
  json manifest = json::parse(mf);
  const fs::path base = fs::path(manifest_path).parent_path();

  FleetDataset fleet;
  for (const auto& entry : manifest.at("sites")) {
    SiteDataset site;
    site.site_id = entry.at("site_id").get<int>();
    const fs::path csv_path = base / entry.at("path").get<std::string>();
    std::ifstream in(csv_path);
    if (!in) throw std::runtime_error("cannot open " + csv_path.string());

    std::string line;
    std::getline(in, line);  // header
    struct Accum {
      double event_time;
      int indicator;
      Eigen::VectorXd covariates;
      std::vector<double> t, y;
    };
    std::vector<std::pair<int, Accum>> order;
    auto find = [&](int uid) -> Accum* {
      for (auto& p : order)
        if (p.first == uid) return &p.second;
      return nullptr;
    };
    int lineno = 1;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      const auto f = split_csv_row(line);
      if (f.size() != 6)
        throw std::runtime_error(csv_path.string() + ":" +
                                 std::to_string(lineno) +
                                 ": expected 6 fields");
      const int uid = std::stoi(f[0]);
      Accum* acc = find(uid);
      if (!acc) {
        Accum a;
        a.event_time = std::stod(f[1]);
        a.indicator = std::stoi(f[2]);
        json w = json::parse(f[3]);
        a.covariates.resize(static_cast<Eigen::Index>(w.size()));
        for (std::size_t i = 0; i < w.size(); ++i)
          a.covariates[static_cast<Eigen::Index>(i)] = w[i].get<double>();
        order.emplace_back(uid, std::move(a));
        acc = &order.back().second;
      }
      acc->t.push_back(std::stod(f[4]));
      acc->y.push_back(std::stod(f[5]));
    }
    for (auto& [uid, acc] : order) {
      UnitRecord u;
      u.site_id = site.site_id;
      u.unit_id = uid;
      u.event_time = acc.event_time;
      u.event_indicator = acc.indicator;
      u.covariates = acc.covariates;
      u.timestamps = Eigen::Map<Eigen::VectorXd>(acc.t.data(),
                                                 static_cast<Eigen::Index>(acc.t.size()));
      u.signal = Eigen::Map<Eigen::VectorXd>(acc.y.data(),
                                             static_cast<Eigen::Index>(acc.y.size()));
      site.units.push_back(std::move(u));
    }
    fleet.sites.push_back(std::move(site));
  }
  return fleet;
}

}  // namespace fedprog
