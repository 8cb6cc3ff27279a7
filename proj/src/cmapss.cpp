#include "fedprog/cmapss.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace fedprog {

std::vector<CmapssUnitSeries> parse_fd001(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);

  struct RawUnit {
    int id;
    std::vector<std::array<double, 26>> rows;
  };
  std::vector<RawUnit> raw;
  std::string line;
  int lineno = 0;
  bool any = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    any = true;
    std::istringstream ss(line);
    std::array<double, 26> fields{};
    int n = 0;
    double v;
    while (ss >> v) {
      if (n < 26) fields[n] = v;
      ++n;
    }
    if (n != 26)
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": expected 26 fields, got " +
                               std::to_string(n));
    const int id = static_cast<int>(fields[0]);
    if (raw.empty() || raw.back().id != id) raw.push_back({id, {}});
    raw.back().rows.push_back(fields);
  }
  if (!any) throw std::runtime_error(path + ": empty file");

  std::vector<CmapssUnitSeries> out;
  for (const auto& ru : raw) {
    CmapssUnitSeries s;
    s.id = ru.id;
    const int n = static_cast<int>(ru.rows.size());
    s.settings.resize(n, 3);
    s.sensors.resize(n, 21);
    s.cycles.resize(n);
    for (int r = 0; r < n; ++r) {
      s.cycles[r] = static_cast<int>(ru.rows[r][1]);
      if (s.cycles[r] != r + 1)
        throw std::runtime_error(path + ": unit " + std::to_string(ru.id) +
                                 " cycles not contiguous from 1");
      for (int c = 0; c < 3; ++c) s.settings(r, c) = ru.rows[r][2 + c];
      for (int c = 0; c < 21; ++c) s.sensors(r, c) = ru.rows[r][5 + c];
    }
    out.push_back(std::move(s));
  }
  return out;
}

Eigen::VectorXd select_sensor(const CmapssUnitSeries& series,
                              int sensor_index) {
  if (sensor_index < 1 || sensor_index > 21)
    throw std::invalid_argument("sensor index must lie in 1..21");
  return series.sensors.col(sensor_index - 1);
}

CensorResult apply_censor_threshold(const CmapssUnitSeries& series,
                                    int threshold) {
  if (threshold <= 0) throw std::invalid_argument("threshold must be > 0");
  CensorResult out;
  const int ending = series.ending_cycle();
  if (ending > threshold) {
    out.event_time = threshold;
    out.event_indicator = 0;
    out.n_keep = threshold;
  } else {
    // Ending exactly at the threshold counts as a failure.
    out.event_time = ending;
    out.event_indicator = 1;
    out.n_keep = ending;
  }
  return out;
}

CmapssIngest build_units(const std::vector<CmapssUnitSeries>& series,
                         int sensor, int threshold) {
  CmapssIngest out;
  out.sensor = sensor;
  out.threshold = threshold;
  int dense_id = 0;
  for (const auto& s : series) {
    const CensorResult cr = apply_censor_threshold(s, threshold);
    const Eigen::VectorXd signal = select_sensor(s, sensor);
    UnitRecord u;
    u.site_id = -1;
    u.unit_id = dense_id++;
    u.event_time = cr.event_time;
    u.event_indicator = cr.event_indicator;
    u.timestamps.resize(cr.n_keep);
    u.signal.resize(cr.n_keep);
    for (int j = 0; j < cr.n_keep; ++j) {
      u.timestamps[j] = static_cast<double>(s.cycles[j]);
      u.signal[j] = signal[j];
    }
    u.covariates = Eigen::VectorXd();  // time-invariant covariates absent
    out.units.push_back(std::move(u));
    out.raw_ending_cycle.push_back(s.ending_cycle());
  }
  return out;
}

Standardizer fit_standardizer(const FleetDataset& fleet,
                              const std::vector<int>& site_ids) {
  double sum = 0.0, sq = 0.0;
  long n = 0;
  for (int sid : site_ids) {
    const SiteDataset& site = fleet.site(sid);
    for (const auto& u : site.units) {
      sum += u.signal.sum();
      sq += u.signal.squaredNorm();
      n += u.signal.size();
    }
  }
  if (n < 2) throw std::invalid_argument("not enough observations");
  Standardizer st;
  st.mean = sum / n;
  st.sd = std::sqrt(std::max(1e-12, sq / n - st.mean * st.mean));
  return st;
}

void apply_standardizer(const Standardizer& st, FleetDataset* fleet) {
  for (auto& site : fleet->sites)
    for (auto& u : site.units)
      u.signal = ((u.signal.array() - st.mean) / st.sd).matrix();
}

void write_fd001_fixture(const std::string& path, int n_units,
                         std::uint64_t seed) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  // Typical magnitudes per sensor column; the four informative channels get
  // a monotone wear trend, the rest stay flat.
  static const double base[21] = {518.67, 642.0,  1585.0, 1400.0, 14.62,
                                  21.61,  554.0,  2388.0, 9050.0, 1.30,
                                  47.35,  521.7,  2388.1, 8130.0, 8.42,
                                  0.03,   392.0,  2388.0, 100.0,  38.9,
                                  23.30};
  static const double noise_sd[21] = {0.0,  0.45, 5.5,  7.0,  0.0,  0.001,
                                      0.85, 0.07, 20.0, 0.0,  0.25, 0.55,
                                      0.07, 16.0, 0.03, 0.0,  1.40, 0.08,
                                      0.0,  0.16, 0.10};
  // Trend amplitude at end of life; sensor indices are 1-based.
  struct Trend {
    int sensor;
    double amp;
  };
  static const Trend trends[] = {{4, 32.0}, {15, 0.30}, {17, 9.0}, {20, -1.6},
                                 {2, 4.5},  {3, 25.0},  {11, 1.6}, {7, -6.0}};

  for (int unit = 1; unit <= n_units; ++unit) {
    const double ln = 5.28 + 0.25 * normal(rng);
    const int n_cycles =
        std::clamp(static_cast<int>(std::lround(std::exp(ln))), 130, 360);
    const double severity = 0.8 + 0.4 * unif(rng);
    const double shape = 1.3 + 0.6 * unif(rng);
    for (int cycle = 1; cycle <= n_cycles; ++cycle) {
      const double frac = static_cast<double>(cycle) / n_cycles;
      out << unit << ' ' << cycle;
      for (int sIdx = 0; sIdx < 3; ++sIdx) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), " %.4f", 0.001 * normal(rng));
        out << buf;
      }
      double row[21];
      for (int c = 0; c < 21; ++c)
        row[c] = base[c] + noise_sd[c] * normal(rng);
      for (const auto& tr : trends)
        row[tr.sensor - 1] +=
            tr.amp * severity * std::pow(frac, shape);
      for (int c = 0; c < 21; ++c) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), " %.2f", row[c]);
        out << buf;
      }
      out << '\n';
    }
  }
}

}  // namespace fedprog
