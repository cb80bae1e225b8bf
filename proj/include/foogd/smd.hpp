#pragma once

#include <utility>
#include <vector>

#include "foogd/models.hpp"
#include "foogd/rng.hpp"
#include "foogd/sgd.hpp"

namespace foogd {

struct LangevinConfig {
  int steps = 20;
  double step_size = 0.01;
  double sigma = 0.1;       // noise level fed to the score net
  bool backprop_full_chain = true;

  void validate() const;
};

enum class BandwidthPolicy { kFixed, kMedian };

struct Sm3dConfig {
  double lambda_m = 0.5;
  std::vector<double> sigmas = {0.1};
  BandwidthPolicy bandwidth = BandwidthPolicy::kMedian;
  double fixed_bandwidth = 1.0;
  bool mmd_unbiased = false;  // default V-statistic

  void validate() const;
};

/// V ~ N(0,I); Z_tilde = Z + sigma*V. Both returned so the target -V/sigma
/// is exact.
std::pair<Tensor, Tensor> perturb(const Tensor& Z, double sigma,
                                  RngStream& stream);

/// 0.5 * mean over batch of ||s(z_tilde, sigma) + v/sigma||^2.
Var dsm_loss(const MlpSpec& spec_s, const MlpVars& s, const Tensor& Z,
             double sigma, RngStream& stream);

/// Multi-sigma: unweighted mean of per-sigma DSM losses.
Var dsm_loss_multi(const MlpSpec& spec_s, const MlpVars& s, const Tensor& Z,
                   const std::vector<double>& sigmas, RngStream& stream);

/// z^0 ~ N(0,I); z^t = z^{t-1} + (eps/2) s(z^{t-1}) + sqrt(eps) w^t.
/// In full-chain mode the result is differentiable w.r.t. the score
/// parameters, with the injected noise treated as constants.
Var langevin_sample(const MlpSpec& spec_s, const MlpVars& s, Tape& tape,
                    std::size_t batch, std::size_t dim,
                    const LangevinConfig& cfg, RngStream& stream);

Tensor langevin_sample_value(const ModelBundle& b, std::size_t batch,
                             const LangevinConfig& cfg, RngStream& stream);

/// Gaussian-kernel MMD; V-statistic by default (diagonal included), U with
/// the flag. Differentiable w.r.t. both inputs.
Var mmd(Var X, Var Y, double h, bool unbiased = false);
double mmd_value(const Tensor& X, const Tensor& Y, double h,
                 bool unbiased = false);

/// Median of pairwise squared distances over the pooled rows; 1.0 when all
/// points coincide.
double median_bandwidth(const std::vector<const Tensor*>& sets);
double median_bandwidth(const Tensor& X);

struct Sm3dParts {
  double dsm = 0.0;
  double mmd = 0.0;
  double total = 0.0;
  double bandwidth = 0.0;
};

/// (1-lambda_m)*DSM + lambda_m*MMD(Z detached, Z_gen).
Var sm3d_loss(const MlpSpec& spec_s, const MlpVars& s, Tape& tape,
              const Tensor& Z, const Sm3dConfig& cfg,
              const LangevinConfig& lcfg, RngStream& stream, Sm3dParts* parts);

/// One SGD step of the score model on the SM3D objective; theta_f/theta_g
/// untouched.
Sm3dParts score_update_step(ModelBundle& bundle, const Tensor& X,
                            const Sm3dConfig& cfg, const LangevinConfig& lcfg,
                            const SgdConfig& opt, SgdState& state,
                            RngStream& stream, double* grad_norm = nullptr);

}  // namespace foogd
