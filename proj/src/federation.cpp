#include "fedprog/federation.hpp"

#include "fedprog/num_format.hpp"
#include "fedprog/optim.hpp"

#include <json.hpp>

#include <sys/socket.h>
#include <unistd.h>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>

namespace fedprog {

using nlohmann::json;

// --- Messages -------------------------------------------------------------

std::string ParameterMessage::to_json_line() const {
  json j;
  j["round"] = round;
  j["site"] = site;
  j["stage"] = stage;
  j["layout"] = layout;
  j["units"] = units;
  j["observations"] = observations;
  j["values"] = vec_to_json(values);
  return j.dump();
}

ParameterMessage ParameterMessage::from_json_line(const std::string& line) {
  json j = json::parse(line);
  ParameterMessage m;
  m.round = j.at("round").get<int>();
  m.site = j.at("site").get<int>();
  m.stage = j.at("stage").get<std::string>();
  m.layout = j.at("layout").get<std::string>();
  m.units = j.at("units").get<long>();
  m.observations = j.at("observations").get<long>();
  m.values = vec_from_json(j.at("values"));
  return m;
}

SchemaReport validate_message_schema(const std::string& json_line) {
  SchemaReport rep;
  auto fail = [&](const std::string& msg) {
    rep.ok = false;
    rep.violations.push_back(msg);
  };
  json j;
  try {
    j = json::parse(json_line);
  } catch (const std::exception& e) {
    fail(std::string("not valid JSON: ") + e.what());
    return rep;
  }
  static const std::vector<std::string> allowed = {
      "round", "site", "stage", "layout", "units", "observations", "values"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      fail("unexpected field '" + key + "'");
  }
  for (const auto& key : allowed)
    if (!j.contains(key)) fail("missing field '" + key + "'");
  if (!rep.ok) return rep;
  for (const auto& key : {"round", "site", "units", "observations"})
    if (!j[key].is_number_integer()) fail(std::string(key) + " not integral");
  if (!j["stage"].is_string() ||
      (j["stage"] != "mgp" && j["stage"] != "cox"))
    fail("stage not in {mgp, cox}");
  if (!j["layout"].is_string()) fail("layout not a string");
  if (!j["values"].is_array()) {
    fail("values not an array");
    return rep;
  }
  for (const auto& v : j["values"]) {
    if (!v.is_string()) {
      fail("values entry not a decimal string");
      break;
    }
    const std::string s = v.get<std::string>();
    char* end = nullptr;
    std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0') {
      fail("values entry not numeric: " + s);
      break;
    }
  }
  return rep;
}

SchemaReport MessageAudit::validate_all() const {
  SchemaReport rep;
  for (const auto& line : lines_) {
    SchemaReport r = validate_message_schema(line);
    if (!r.ok) {
      rep.ok = false;
      rep.violations.insert(rep.violations.end(), r.violations.begin(),
                            r.violations.end());
    }
  }
  return rep;
}

// --- Transports -------------------------------------------------------------

namespace {

class LoopbackTransport final : public Transport {
 public:
  void upload(const ParameterMessage& msg) override {
    std::lock_guard<std::mutex> lock(mu_);
    if (audit_) audit_->record(msg.to_json_line());
    inbox_.push_back(msg);
  }

  std::vector<ParameterMessage> collect(int round, const std::string& stage,
                                        const std::vector<int>& sites) override {
    std::lock_guard<std::mutex> lock(mu_);
    std::vector<ParameterMessage> out;
    for (int site : sites) {
      bool found = false;
      for (auto it = inbox_.begin(); it != inbox_.end(); ++it) {
        if (it->site == site && it->round == round && it->stage == stage) {
          out.push_back(*it);
          inbox_.erase(it);
          found = true;
          break;
        }
      }
      if (!found)
        throw RoundError("missing message from site " + std::to_string(site) +
                         " at round " + std::to_string(round));
    }
    return out;
  }

  void broadcast(int /*round*/, const std::string& /*stage*/,
                 const Eigen::VectorXd& payload,
                 const std::vector<int>& sites) override {
    std::lock_guard<std::mutex> lock(mu_);
    for (int site : sites) pending_[site] = payload;
  }

  Eigen::VectorXd receive_broadcast(int site) override {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = pending_.find(site);
    if (it == pending_.end())
      throw RoundError("no broadcast pending for site " +
                       std::to_string(site));
    Eigen::VectorXd v = it->second;
    pending_.erase(it);
    return v;
  }

 private:
  std::mutex mu_;
  std::vector<ParameterMessage> inbox_;
  std::map<int, Eigen::VectorXd> pending_;
};

// Per-site full-duplex AF_UNIX socket pair carrying one JSON document per
// line in each direction.
class StreamTransport final : public Transport {
 public:
  explicit StreamTransport(const std::vector<int>& sites) {
    for (int site : sites) {
      int fds[2];
      if (socketpair(AF_UNIX, SOCK_STREAM, 0, fds) != 0)
        throw std::runtime_error(std::string("socketpair: ") +
                                 std::strerror(errno));
      const int buf = 1 << 21;
      setsockopt(fds[0], SOL_SOCKET, SO_SNDBUF, &buf, sizeof(buf));
      setsockopt(fds[1], SOL_SOCKET, SO_SNDBUF, &buf, sizeof(buf));
      ends_[site] = {fds[0], fds[1], "", ""};
    }
  }

  ~StreamTransport() override {
    for (auto& [site, e] : ends_) {
      close(e.server_fd);
      close(e.site_fd);
    }
  }

  void upload(const ParameterMessage& msg) override {
    const std::string line = msg.to_json_line();
    if (audit_) audit_->record(line);
    write_line(ends_.at(msg.site).site_fd, line);
  }

  std::vector<ParameterMessage> collect(int round, const std::string& stage,
                                        const std::vector<int>& sites) override {
    std::vector<ParameterMessage> out;
    for (int site : sites) {
      auto& e = ends_.at(site);
      const std::string line = read_line(e.server_fd, &e.server_buf);
      ParameterMessage m = ParameterMessage::from_json_line(line);
      if (m.round != round || m.stage != stage || m.site != site)
        throw RoundError("out-of-order message at round " +
                         std::to_string(round));
      out.push_back(std::move(m));
    }
    return out;
  }

  void broadcast(int round, const std::string& stage,
                 const Eigen::VectorXd& payload,
                 const std::vector<int>& sites) override {
    json j;
    j["round"] = round;
    j["stage"] = stage;
    j["values"] = vec_to_json(payload);
    const std::string line = j.dump();
    for (int site : sites) write_line(ends_.at(site).server_fd, line);
  }

  Eigen::VectorXd receive_broadcast(int site) override {
    auto& e = ends_.at(site);
    const std::string line = read_line(e.site_fd, &e.site_buf);
    json j = json::parse(line);
    return vec_from_json(j.at("values"));
  }

 private:
  struct Endpoint {
    int server_fd;  // server side of the pair
    int site_fd;    // site side
    std::string server_buf;
    std::string site_buf;
  };

  static void write_line(int fd, const std::string& line) {
    std::string framed = line + "\n";
    std::size_t off = 0;
    while (off < framed.size()) {
      const ssize_t n = ::write(fd, framed.data() + off, framed.size() - off);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw std::runtime_error(std::string("transport write: ") +
                                 std::strerror(errno));
      }
      off += static_cast<std::size_t>(n);
    }
  }

  static std::string read_line(int fd, std::string* buf) {
    for (;;) {
      const auto pos = buf->find('\n');
      if (pos != std::string::npos) {
        std::string line = buf->substr(0, pos);
        buf->erase(0, pos + 1);
        return line;
      }
      char chunk[65536];
      const ssize_t n = ::read(fd, chunk, sizeof(chunk));
      if (n < 0) {
        if (errno == EINTR) continue;
        throw std::runtime_error(std::string("transport read: ") +
                                 std::strerror(errno));
      }
      if (n == 0) throw RoundError("transport closed mid-round");
      buf->append(chunk, static_cast<std::size_t>(n));
    }
  }

  std::map<int, Endpoint> ends_;
};

}  // namespace

std::unique_ptr<Transport> make_loopback_transport() {
  return std::make_unique<LoopbackTransport>();
}

std::unique_ptr<Transport> make_stream_transport(
    const std::vector<int>& sites) {
  return std::make_unique<StreamTransport>(sites);
}

std::unique_ptr<Transport> make_transport(const std::string& name,
                                          const std::vector<int>& sites) {
  if (name == "loopback") return make_loopback_transport();
  if (name == "stream") return make_stream_transport(sites);
  throw std::invalid_argument("unknown transport '" + name + "'");
}

// --- Updates ----------------------------------------------------------------

Eigen::VectorXd local_update_gd(Eigen::VectorXd params, const ObjectiveFn& obj,
                                double eta, int steps) {
  if (eta <= 0.0) throw std::invalid_argument("step size must be positive");
  if (steps < 1) throw std::invalid_argument("need at least one step");
  Eigen::VectorXd grad(params.size());
  for (int e = 0; e < steps; ++e) {
    obj(params, &grad);
    if (!grad.allFinite())
      throw RoundError("non-finite gradient in local update");
    params -= eta * grad;
  }
  return params;
}

Eigen::VectorXd central_update(const std::vector<ParameterMessage>& messages,
                               const std::vector<double>& weights) {
  if (messages.empty()) throw RoundError("no messages to aggregate");
  if (messages.size() != weights.size())
    throw RoundError("message/weight count mismatch");
  std::vector<std::size_t> idx(messages.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return messages[a].site < messages[b].site;
  });
  const int round = messages[0].round;
  const std::string& stage = messages[0].stage;
  Eigen::VectorXd agg = Eigen::VectorXd::Zero(messages[0].values.size());
  for (std::size_t i : idx) {
    const auto& m = messages[i];
    if (m.round != round || m.stage != stage)
      throw RoundError("mixed rounds or stages in aggregation");
    if (m.values.size() != agg.size())
      throw RoundError("payload size mismatch in aggregation");
    agg += weights[i] * m.values;
  }
  return agg;
}

// --- MGP stage ----------------------------------------------------------------

namespace {

void floor_psi_blocks(MGPState* state, double floor) {
  const auto offs = state->grid.offsets();
  for (std::size_t i = 0; i < state->grid.z.size(); ++i) {
    const Eigen::Index p = state->grid.z[i].size();
    Eigen::MatrixXd blk = state->vs.psi.block(offs[i], offs[i], p, p);
    blk = 0.5 * (blk + blk.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(blk);
    if (es.eigenvalues().minCoeff() >= floor) continue;
    Eigen::VectorXd ev = es.eigenvalues().cwiseMax(floor);
    state->vs.psi.block(offs[i], offs[i], p, p) =
        es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  }
}

struct SiteSlot {
  const SiteDataset* site = nullptr;
  std::vector<UnitHyper> hypers;
  double weight = 0.0;  // r_k
  AdamState adam_local, adam_global;
};

void write_round_log(std::ofstream* log, int round, const std::string& stage,
                     const Eigen::VectorXd& payload) {
  if (!log || !log->is_open()) return;
  json j;
  j["round"] = round;
  j["stage"] = stage;
  j["values"] = vec_to_json(payload);
  (*log) << j.dump() << '\n';
}

}  // namespace

MgpRunResult run_fed_mgp(const FleetDataset& training, const MGPState& init,
                         const FedConfig& cfg, Transport& transport,
                         const std::string& round_log_path) {
  const double total_obs = static_cast<double>(training.total_obs());
  std::vector<SiteSlot> slots;
  std::vector<int> site_ids;
  for (const auto& site : training.sites) {
    SiteSlot slot;
    slot.site = &site;
    slot.hypers = init.site_hypers.at(site.site_id);
    slot.weight = static_cast<double>(site.n_obs()) / total_obs;
    slots.push_back(std::move(slot));
    site_ids.push_back(site.site_id);
  }

  std::ofstream log;
  if (!round_log_path.empty()) log.open(round_log_path);

  MGPState state = init;
  Eigen::VectorXd global = pack_global(state);

  for (int round = 1; round <= cfg.R1; ++round) {
    transport.broadcast(round, "mgp", global, site_ids);
    for (auto& slot : slots) {
      Eigen::VectorXd g_k = transport.receive_broadcast(slot.site->site_id);
      MGPState local_state = state;  // grid/ell template
      Eigen::VectorXd l_k = pack_site_local(slot.hypers);
      for (int e = 0; e < cfg.E1; ++e) {
        unpack_global(g_k, &local_state);
        unpack_site_local(l_k, &slot.hypers);
        SiteObjectiveEval ev = eval_site_objective(
            *slot.site, slot.hypers, local_state, total_obs, true);
        if (!std::isfinite(ev.value) || !ev.grad_local.allFinite() ||
            !ev.grad_global.allFinite())
          throw RoundError("non-finite gradient at site " +
                           std::to_string(slot.site->site_id) + " round " +
                           std::to_string(round));
        if (cfg.optimizer == FedConfig::Optimizer::GD) {
          // Own-parameter step scaled by r_k: the r_k-weighted server average
          // then composes to one pooled gradient step for every block.
          l_k -= (cfg.eta1 * slot.weight) * ev.grad_local;
          g_k -= cfg.eta1 * ev.grad_global;
        } else {
          l_k -= slot.adam_local.step(cfg.eta1, ev.grad_local);
          g_k -= slot.adam_global.step(cfg.eta1, ev.grad_global);
          unpack_global(g_k, &local_state);
          floor_psi_blocks(&local_state, cfg.psi_eigen_floor);
          g_k = pack_global(local_state);
        }
      }
      unpack_site_local(l_k, &slot.hypers);
      ParameterMessage msg;
      msg.round = round;
      msg.site = slot.site->site_id;
      msg.stage = "mgp";
      msg.layout = "mgp-global-v1";
      msg.units = slot.site->unit_count();
      msg.observations = static_cast<long>(slot.site->n_obs());
      msg.values = g_k;
      transport.upload(msg);
    }
    auto messages = transport.collect(round, "mgp", site_ids);
    std::vector<double> weights;
    for (const auto& m : messages)
      weights.push_back(static_cast<double>(m.observations) / total_obs);
    Eigen::VectorXd aggregated = central_update(messages, weights);
    write_round_log(log.is_open() ? &log : nullptr, round, "mgp", aggregated);
    const double rel_change =
        (aggregated - global).norm() / std::max(1.0, global.norm());
    global = aggregated;
    if (cfg.early_stop_tol > 0.0 && rel_change < cfg.early_stop_tol) {
      MgpRunResult out;
      unpack_global(global, &state);
      for (auto& slot : slots)
        state.site_hypers[slot.site->site_id] = slot.hypers;
      out.state = std::move(state);
      out.rounds = round;
      return out;
    }
  }

  unpack_global(global, &state);
  for (auto& slot : slots) state.site_hypers[slot.site->site_id] = slot.hypers;
  MgpRunResult out;
  out.state = std::move(state);
  out.rounds = cfg.R1;
  return out;
}

MGPState train_mgp_centralized(const FleetDataset& training,
                               const MGPState& init, const FedConfig& cfg,
                               int steps) {
  const double total_obs = static_cast<double>(training.total_obs());
  MGPState state = init;
  Eigen::VectorXd global = pack_global(state);
  struct Slot {
    const SiteDataset* site;
    std::vector<UnitHyper> hypers;
    double weight;
    AdamState adam_local;
  };
  std::vector<Slot> slots;
  for (const auto& site : training.sites) {
    slots.push_back({&site, init.site_hypers.at(site.site_id),
                     static_cast<double>(site.n_obs()) / total_obs, {}});
  }
  AdamState adam_global;

  for (int step = 0; step < steps; ++step) {
    unpack_global(global, &state);
    Eigen::VectorXd g_total = Eigen::VectorXd::Zero(global.size());
    std::vector<Eigen::VectorXd> local_grads(slots.size());
    for (std::size_t k = 0; k < slots.size(); ++k) {
      SiteObjectiveEval ev = eval_site_objective(
          *slots[k].site, slots[k].hypers, state, total_obs, true);
      if (!std::isfinite(ev.value) || !ev.grad_local.allFinite() ||
          !ev.grad_global.allFinite())
        throw RoundError("non-finite gradient in centralized training");
      local_grads[k] = ev.grad_local;
      g_total += slots[k].weight * ev.grad_global;
    }
    if (cfg.optimizer == FedConfig::Optimizer::GD) {
      for (std::size_t k = 0; k < slots.size(); ++k) {
        Eigen::VectorXd l_k = pack_site_local(slots[k].hypers);
        l_k -= (cfg.eta1 * slots[k].weight) * local_grads[k];
        unpack_site_local(l_k, &slots[k].hypers);
      }
      global -= cfg.eta1 * g_total;
    } else {
      for (std::size_t k = 0; k < slots.size(); ++k) {
        Eigen::VectorXd l_k = pack_site_local(slots[k].hypers);
        l_k -= slots[k].adam_local.step(cfg.eta1, local_grads[k]);
        unpack_site_local(l_k, &slots[k].hypers);
      }
      global -= adam_global.step(cfg.eta1, g_total);
      unpack_global(global, &state);
      floor_psi_blocks(&state, cfg.psi_eigen_floor);
      global = pack_global(state);
    }
  }
  unpack_global(global, &state);
  for (auto& slot : slots) state.site_hypers[slot.site->site_id] = slot.hypers;
  return state;
}

// --- Cox stage ------------------------------------------------------------------

CoxParams default_cox_init(const std::vector<SiteDataset>& sites,
                           BaselineHazard::Kind kind, int n_cov) {
  double sum_v = 0.0;
  int events = 0, n = 0;
  for (const auto& site : sites)
    for (const auto& u : site.units) {
      sum_v += u.event_time;
      events += u.event_indicator;
      ++n;
    }
  CoxParams params;
  params.baseline.kind = kind;
  params.baseline.lambda =
      sum_v > 0.0 ? std::max(1e-8, static_cast<double>(std::max(events, 1)) /
                                       sum_v)
                  : 1e-3;
  params.baseline.rho = 1.0;
  params.gamma = Eigen::VectorXd::Zero(n_cov);
  params.beta = 0.0;
  return params;
}

CoxRunResult run_fed_cox(const std::vector<SiteDataset>& sites,
                         const std::vector<std::vector<Trajectory>>& trajs,
                         const CoxParams& init, const FedConfig& cfg,
                         Transport& transport,
                         const std::string& round_log_path) {
  if (sites.size() != trajs.size())
    throw std::invalid_argument("site/trajectory count mismatch");
  const CoxParamLayout layout = layout_of(init);
  int m_total = 0;
  for (const auto& s : sites) m_total += s.unit_count();

  struct Slot {
    const SiteDataset* site;
    std::vector<CoxUnitCache> cache;
    double weight;
    AdamState adam;
  };
  std::vector<Slot> slots;
  std::vector<int> site_ids;
  for (std::size_t k = 0; k < sites.size(); ++k) {
    slots.push_back({&sites[k], build_cox_cache(sites[k], trajs[k]),
                     static_cast<double>(sites[k].unit_count()) / m_total,
                     {}});
    site_ids.push_back(sites[k].site_id);
  }

  std::ofstream log;
  if (!round_log_path.empty()) log.open(round_log_path);

  Eigen::VectorXd global = pack_cox(init);
  for (int round = 1; round <= cfg.R2; ++round) {
    transport.broadcast(round, "cox", global, site_ids);
    for (auto& slot : slots) {
      Eigen::VectorXd p_k = transport.receive_broadcast(slot.site->site_id);
      for (int e = 0; e < cfg.E2; ++e) {
        Eigen::VectorXd grad;
        const double value = site_cox_objective(
            slot.cache, unpack_cox(p_k, layout), true, &grad);
        if (!std::isfinite(value) || !grad.allFinite())
          throw RoundError("non-finite gradient at site " +
                           std::to_string(slot.site->site_id));
        if (cfg.optimizer == FedConfig::Optimizer::GD)
          p_k -= cfg.eta2 * grad;
        else
          p_k -= slot.adam.step(cfg.eta2, grad);
      }
      ParameterMessage msg;
      msg.round = round;
      msg.site = slot.site->site_id;
      msg.stage = "cox";
      msg.layout = layout.weibull ? "cox-weibull-v1" : "cox-exponential-v1";
      msg.units = slot.site->unit_count();
      msg.observations = static_cast<long>(slot.site->n_obs());
      msg.values = p_k;
      transport.upload(msg);
    }
    auto messages = transport.collect(round, "cox", site_ids);
    std::vector<double> weights;
    for (const auto& m : messages)
      weights.push_back(static_cast<double>(m.units) / m_total);
    Eigen::VectorXd aggregated = central_update(messages, weights);
    write_round_log(log.is_open() ? &log : nullptr, round, "cox", aggregated);
    const double rel_change =
        (aggregated - global).norm() / std::max(1.0, global.norm());
    global = aggregated;
    if (cfg.early_stop_tol > 0.0 && rel_change < cfg.early_stop_tol)
      return {unpack_cox(global, layout), round};
  }
  return {unpack_cox(global, layout), cfg.R2};
}

CoxParams train_cox_centralized(
    const std::vector<SiteDataset>& sites,
    const std::vector<std::vector<Trajectory>>& trajs, const CoxParams& init,
    const FedConfig& cfg, int steps) {
  const CoxParamLayout layout = layout_of(init);
  int m_total = 0;
  for (const auto& s : sites) m_total += s.unit_count();
  struct Slot {
    std::vector<CoxUnitCache> cache;
    double weight;
  };
  std::vector<Slot> slots;
  for (std::size_t k = 0; k < sites.size(); ++k)
    slots.push_back({build_cox_cache(sites[k], trajs[k]),
                     static_cast<double>(sites[k].unit_count()) / m_total});

  Eigen::VectorXd params = pack_cox(init);
  AdamState adam;
  for (int step = 0; step < steps; ++step) {
    Eigen::VectorXd g_total = Eigen::VectorXd::Zero(params.size());
    for (const auto& slot : slots) {
      Eigen::VectorXd grad;
      site_cox_objective(slot.cache, unpack_cox(params, layout), true, &grad);
      if (!grad.allFinite())
        throw RoundError("non-finite gradient in centralized Cox training");
      g_total += slot.weight * grad;
    }
    if (cfg.optimizer == FedConfig::Optimizer::GD)
      params -= cfg.eta2 * g_total;
    else
      params -= adam.step(cfg.eta2, g_total);
  }
  return unpack_cox(params, layout);
}

Trajectory mgp_unit_trajectory(const MGPState& state, const UnitHyper& hyper,
                               double horizon) {
  auto predictor = std::make_shared<ConditionedPredictor>(
      hyper, state, Eigen::VectorXd(), Eigen::VectorXd());
  return Trajectory::from_batch(
      [predictor](const double* t, double* out, std::size_t n) {
        predictor->mean_batch(t, out, n);
      },
      horizon);
}

JointRunResult run_fed_joint(const FleetDataset& training_sites,
                             const FedConfig& cfg,
                             BaselineHazard::Kind baseline_kind,
                             Transport& transport, double trajectory_horizon,
                             const std::string& round_log_dir) {
  MGPState init = init_state(training_sites);
  const std::string mgp_log =
      round_log_dir.empty() ? "" : round_log_dir + "/rounds_mgp.jsonl";
  MgpRunResult stage1 = run_fed_mgp(training_sites, init, cfg, transport,
                                    mgp_log);

  std::vector<SiteDataset> sites;
  std::vector<std::vector<Trajectory>> trajs;
  int n_cov = 0;
  for (const auto& site : training_sites.sites) {
    sites.push_back(site);
    std::vector<Trajectory> site_trajs;
    const auto& hypers = stage1.state.site_hypers.at(site.site_id);
    for (std::size_t m = 0; m < site.units.size(); ++m) {
      site_trajs.push_back(mgp_unit_trajectory(stage1.state, hypers[m],
                                               trajectory_horizon));
      n_cov = std::max(
          n_cov, static_cast<int>(site.units[m].covariates.size()));
    }
    trajs.push_back(std::move(site_trajs));
  }

  CoxParams cox_init = default_cox_init(sites, baseline_kind, n_cov);
  const std::string cox_log =
      round_log_dir.empty() ? "" : round_log_dir + "/rounds_cox.jsonl";
  CoxRunResult stage2 =
      run_fed_cox(sites, trajs, cox_init, cfg, transport, cox_log);

  JointRunResult out;
  out.mgp = std::move(stage1.state);
  out.cox = stage2.params;
  out.rounds_mgp = stage1.rounds;
  out.rounds_cox = stage2.rounds;
  return out;
}

}  // namespace fedprog
