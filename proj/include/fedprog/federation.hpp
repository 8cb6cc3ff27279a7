#pragma once

#include "fedprog/coxph.hpp"
#include "fedprog/data.hpp"
#include "fedprog/mgp.hpp"

#include <Eigen/Core>

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedprog {

struct FedConfig {
  double eta1 = 0.05;  // MGP stage step size
  double eta2 = 0.05;  // Cox stage step size
  int E1 = 1;          // local iterations per round, MGP
  int E2 = 1;
  int R1 = 25;         // communication rounds
  int R2 = 25;

  enum class Optimizer { GD, Adam };
  Optimizer optimizer = Optimizer::GD;
  double early_stop_tol = 0.0;    // 0 disables
  double psi_eigen_floor = 1e-10; // Adam mode only
};

struct RoundError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// One uploaded parameter payload. Carries model parameters and counts only;
/// never raw observations (machine-checked by validate_message_schema).
struct ParameterMessage {
  int round = 0;
  int site = 0;
  std::string stage;   // "mgp" | "cox"
  std::string layout;  // e.g. "mgp-global-v1"
  long units = 0;
  long observations = 0;
  Eigen::VectorXd values;

  std::string to_json_line() const;
  static ParameterMessage from_json_line(const std::string& line);
};

struct SchemaReport {
  bool ok = true;
  std::vector<std::string> violations;
};
SchemaReport validate_message_schema(const std::string& json_line);

/// Collects the serialized form of every uploaded message.
class MessageAudit {
 public:
  void record(const std::string& line) { lines_.push_back(line); }
  const std::vector<std::string>& lines() const { return lines_; }
  SchemaReport validate_all() const;

 private:
  std::vector<std::string> lines_;
};

/// Round-barrier parameter transport between sites and the central server.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual void upload(const ParameterMessage& msg) = 0;
  virtual std::vector<ParameterMessage> collect(int round,
                                                const std::string& stage,
                                                const std::vector<int>& sites) = 0;
  virtual void broadcast(int round, const std::string& stage,
                         const Eigen::VectorXd& payload,
                         const std::vector<int>& sites) = 0;
  virtual Eigen::VectorXd receive_broadcast(int site) = 0;

  void set_audit(MessageAudit* audit) { audit_ = audit; }

 protected:
  MessageAudit* audit_ = nullptr;
};

/// In-process reference transport.
std::unique_ptr<Transport> make_loopback_transport();

/// Newline-delimited JSON over a byte stream (one AF_UNIX socket pair per
/// site); decimal payloads at 17 significant digits replay bit-exactly.
std::unique_ptr<Transport> make_stream_transport(const std::vector<int>& sites);

std::unique_ptr<Transport> make_transport(const std::string& name,
                                          const std::vector<int>& sites);

// --- Local and central updates -------------------------------------------------

/// Objective callback: returns the value; fills the gradient when the pointer
/// is non-null.
using ObjectiveFn =
    std::function<double(const Eigen::VectorXd&, Eigen::VectorXd*)>;

/// Plain gradient descent: exactly `steps` iterations of
/// params <- params - eta * grad. Throws RoundError on a non-finite gradient.
Eigen::VectorXd local_update_gd(Eigen::VectorXd params, const ObjectiveFn& obj,
                                double eta, int steps);

/// Weighted average of uploaded payloads, messages sorted by site id.
/// Throws RoundError when a site is missing or stages/rounds disagree.
Eigen::VectorXd central_update(const std::vector<ParameterMessage>& messages,
                               const std::vector<double>& weights);

// --- Stage drivers -------------------------------------------------------------

struct MgpRunResult {
  MGPState state;
  int rounds = 0;
};

/// Federated MGP stage over the training sites. Per-site hyperparameters stay
/// local; only the global block travels. At E1 = 1 with the GD optimizer this
/// reproduces centralized gradient descent on the pooled per-observation
/// objective exactly (the site's own-parameter step is scaled by r_k so the
/// r_k-weighted average composes to the pooled step).
MgpRunResult run_fed_mgp(const FleetDataset& training, const MGPState& init,
                         const FedConfig& cfg, Transport& transport,
                         const std::string& round_log_path = "");

/// Centralized twin: plain (or Adam) descent on the pooled objective, all
/// parameter blocks updated jointly. `steps` total iterations.
MGPState train_mgp_centralized(const FleetDataset& training,
                               const MGPState& init, const FedConfig& cfg,
                               int steps);

struct CoxRunResult {
  CoxParams params;
  int rounds = 0;
};

CoxRunResult run_fed_cox(const std::vector<SiteDataset>& sites,
                         const std::vector<std::vector<Trajectory>>& trajs,
                         const CoxParams& init, const FedConfig& cfg,
                         Transport& transport,
                         const std::string& round_log_path = "");

CoxParams train_cox_centralized(
    const std::vector<SiteDataset>& sites,
    const std::vector<std::vector<Trajectory>>& trajs, const CoxParams& init,
    const FedConfig& cfg, int steps);

/// Scale-aware Cox initialization: exponential-MLE lambda ignoring
/// covariates, rho = 1, gamma = 0, beta = 0.
CoxParams default_cox_init(const std::vector<SiteDataset>& sites,
                           BaselineHazard::Kind kind, int n_cov);

/// Batched predictive-mean trajectory for a trained unit (no residual
/// conditioning), defined on [0, horizon].
Trajectory mgp_unit_trajectory(const MGPState& state, const UnitHyper& hyper,
                               double horizon);

/// Two-stage run: federated MGP, per-site trajectories, then federated Cox.
struct JointRunResult {
  MGPState mgp;
  CoxParams cox;
  int rounds_mgp = 0;
  int rounds_cox = 0;
};
JointRunResult run_fed_joint(const FleetDataset& training_sites,
                             const FedConfig& cfg,
                             BaselineHazard::Kind baseline_kind,
                             Transport& transport,
                             double trajectory_horizon,
                             const std::string& round_log_dir = "");

}  // namespace fedprog
