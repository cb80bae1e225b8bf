#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "foogd/models.hpp"
#include "foogd/rng.hpp"
#include "foogd/sgd.hpp"
#include "foogd/smd.hpp"

namespace foogd {

/// Gaussian-kernel Stein terms for one pair (z, z') at bandwidth h.
/// With r2 = ||z - z'||^2 and k = exp(-r2/h):
///   grad_z k  = -(2/h)(z - z')k
///   grad_zp k =  (2/h)(z - z')k
///   trace(grad_z grad_zp k) = (2d/h)k - (4/h^2) r2 k
struct KernelTerms {
  double k = 0.0;
  std::vector<double> grad_z;
  std::vector<double> grad_zp;
  double trace = 0.0;
};

KernelTerms kernel_terms(const std::vector<double>& z,
                         const std::vector<double>& zp, double h);

/// Stein-operator pair term u(z_i, z_j) evaluated from precomputed scores.
double ksd_pair_term(const std::vector<double>& zi, const std::vector<double>& zj,
                     const std::vector<double>& si, const std::vector<double>& sj,
                     double h);

/// U-statistic over ordered pairs i != j (V-statistic with the flag).
/// Differentiable w.r.t. both the points and the score values.
Var ksd(Var Zhat, Var S, double h, bool v_statistic = false);

/// Plain evaluation with an explicit score function (test oracle and
/// diagnostics path).
double ksd_value(const Tensor& Zhat,
                 const std::function<std::vector<double>(const std::vector<double>&)>& score,
                 double h, bool v_statistic = false);

/// KSD of samples under the bundle's score net at sigma_eval.
double ksd_value(const ModelBundle& bundle, const Tensor& Zhat, double h,
                 double sigma_eval, bool v_statistic = false);

/// Monte-Carlo mean and standard error of phi(x) * score(x) + phi'(x) with
/// phi = k(., anchor), averaged over anchors.
struct SteinResidual {
  double mean = 0.0;
  double stderr_ = 0.0;
};

SteinResidual stein_identity_residual(
    const std::function<double(double)>& score_1d,
    const std::vector<double>& samples, const std::vector<double>& anchors,
    double h);

enum class AugmentFamily { kRotation, kGaussianJitter, kScale, kCompose };

struct AugmentSpec {
  AugmentFamily family = AugmentFamily::kRotation;
  double magnitude = 0.0;  // degrees for rotation, std fraction for jitter,
                           // relative factor for scale
  double jitter_magnitude = 0.0;  // second leg of compose
  std::string stream_label = "augment";
};

/// Label-preserving transform; magnitude 0 is the identity. Rotation acts on
/// consecutive coordinate pairs (requires even input dim).
Tensor augment(const Tensor& X, const AugmentSpec& spec, RngStream& stream);

struct SagParts {
  double cross_entropy = 0.0;
  double ksd = 0.0;
  double total = 0.0;
  double bandwidth = 0.0;
};

struct SagConfig {
  double lambda_a = 0.05;
  AugmentSpec augment;
  BandwidthPolicy bandwidth = BandwidthPolicy::kMedian;
  double fixed_bandwidth = 1.0;
  double sigma_eval = 0.1;  // smallest configured sigma
  bool ksd_v_statistic = false;

  void validate() const;
};

/// CE(head(f(X)), Y) + lambda_a * KSD over f(augment(X)); the score net
/// enters frozen.
Var sag_loss(const ModelBundle& bundle, const MlpVars& f, const MlpVars& g,
             const MlpVars& s_frozen, Tape& tape, const Tensor& X,
             const std::vector<std::size_t>& Y, const SagConfig& cfg,
             RngStream& stream, SagParts* parts);

/// One SGD step on theta_f and theta_g; theta_s bit-identical before/after.
SagParts feature_update_step(ModelBundle& bundle, const Tensor& X,
                             const std::vector<std::size_t>& Y,
                             const SagConfig& cfg, const SgdConfig& opt,
                             SgdState& state, RngStream& stream,
                             double* grad_norm = nullptr);

}  // namespace foogd
