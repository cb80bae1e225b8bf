#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "foogd/detection.hpp"
#include "foogd/models.hpp"
#include "foogd/sag.hpp"
#include "foogd/smd.hpp"

namespace foogd {

/// Assignment of dataset indices to K clients from per-class Dirichlet draws.
struct Partition {
  std::vector<std::vector<std::size_t>> client_indices;
  std::vector<std::vector<double>> class_proportions;  // [class][client]
  double alpha = 0.0;

  std::size_t clients() const { return client_indices.size(); }
};

/// For each class j, p_{j,.} ~ Dir(alpha * 1_K); samples assigned by
/// largest-remainder rounding so per-class totals are conserved exactly.
Partition dirichlet_partition(const std::vector<std::size_t>& labels,
                              std::size_t K, double alpha, RngStream& stream);

struct FederationConfig {
  std::size_t clients = 10;
  std::size_t rounds = 30;
  std::size_t local_epochs = 5;
  std::size_t batch_size = 64;
  double participation = 1.0;
  SgdConfig optimizer;
  Sm3dConfig smd;
  LangevinConfig langevin;
  SagConfig sag;
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  void validate() const;
};

struct ClientRecord {
  std::size_t client_id = 0;
  double dsm = 0.0, mmd = 0.0, smd_total = 0.0;
  double cross_entropy = 0.0, ksd = 0.0, sag_total = 0.0;
  std::size_t steps = 0;
  double max_grad_norm = 0.0;
};

struct RoundRecord {
  std::size_t round = 0;
  std::vector<ClientRecord> clients;
  double divergence_lhs = 0.0;
  double divergence_rhs = 0.0;
  std::uint64_t model_checksum = 0;
};

using RoundHistory = std::vector<RoundRecord>;

struct ClientState {
  std::size_t client_id = 0;
  std::vector<std::size_t> indices;
  double weight = 0.0;
};

struct TrainData {
  Tensor X;                        // [N, d_x]
  std::vector<std::size_t> labels; // size N
};

/// One client's local pass: copy of the global bundle trained for E epochs
/// of interleaved score and feature updates.
ClientRecord client_update(ModelBundle& local, const TrainData& data,
                           const std::vector<std::size_t>& indices,
                           const FederationConfig& cfg, std::size_t client_id,
                           std::size_t round);

/// Weighted flat-parameter mean. Weights must sum to 1 within 1e-9.
ModelBundle aggregate(const std::vector<ModelBundle>& bundles,
                      const std::vector<double>& weights);

std::uint64_t bundle_checksum(const ModelBundle& b);

struct RunResult {
  ModelBundle global;
  RoundHistory history;
  double max_grad_norm = 0.0;  // running max over the whole run
  double initial_mmd = 0.0;    // measured at init, for the bound report
};

RunResult run_rounds(const FederationConfig& cfg, const Partition& partition,
                     const TrainData& data, const ModelBundle& init);

struct EvalSplit {
  Tensor X;
  std::vector<std::size_t> labels;
};

struct WeightedEval {
  double acc_in = 0.0;
  double acc_inc = 0.0;
  double auroc = 0.0;
  double fpr95 = 0.0;
  double msp_auroc = 0.0;
  double msp_fpr95 = 0.0;
  std::vector<double> client_acc_in, client_acc_inc;
};

/// Per-client accuracy on IN and IN-C splits and detection metrics against
/// the shared OUT set, combined with the dataset-size weights. With
/// pooled_detection the norms from all clients are pooled before the
/// detection metrics are computed.
WeightedEval evaluate_weighted(const ModelBundle& global,
                               const std::vector<EvalSplit>& in_splits,
                               const std::vector<EvalSplit>& inc_splits,
                               const Tensor& out_set, double sigma_eval,
                               bool pooled_detection = false);

double classification_accuracy(const ModelBundle& b, const Tensor& X,
                               const std::vector<std::size_t>& labels);

/// lhs = sum_k w_k ||theta - theta_k||^2, rhs = 4 eta^2 (E-1)^2 Vhat^2,
/// where E is the sync gap in local optimizer steps.
std::pair<double, double> divergence_diagnostic(
    const ModelBundle& global, const std::vector<ModelBundle>& clients,
    const std::vector<double>& weights, double lr, std::size_t sync_gap,
    double max_grad_norm);

struct BoundReport {
  double lhs = 0.0;  // Monte-Carlo mean ||s(z) + z||^2 under N(0,I)
  double rhs = 0.0;  // d/sigma^2 - d + (|D|/B) * C
  double sigma = 0.0;
  double mmd_bound_c = 0.0;
};

BoundReport dsm_bound_report(const ModelBundle& bundle, double sigma,
                             std::size_t batch_size, std::size_t dataset_size,
                             double measured_c, RngStream& stream,
                             std::size_t mc_samples = 4096);

}  // namespace foogd
