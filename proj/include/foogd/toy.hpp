#pragma once

#include "foogd/workbench.hpp"

namespace foogd {

/// Training setup for the 2-D sweep where the score model is fit directly on
/// data coordinates (identity feature extractor).
struct ToyTrainConfig {
  std::size_t steps = 400;
  std::size_t batch_size = 128;
  // plain SGD at a small step: larger rates or heavy momentum let the
  // denoising targets blow the score net up
  SgdConfig optimizer{0.01, 0.0, 0.0};
  LangevinConfig train_langevin{20, 0.05, 0.5, true};
  std::vector<double> sigmas = {0.5};
  std::size_t eval_samples = 2048;
  int eval_langevin_steps = 500;
};

/// Bundle whose feature extractor is a hand-set identity map, so the score
/// network sees raw coordinates.
ModelBundle identity_feature_bundle(std::size_t dim,
                                    std::vector<std::size_t> hidden_s,
                                    std::uint64_t seed);

struct ToyTrainResult {
  ModelBundle model;
  double holdout_mmd = 0.0;   // MMD between generated samples and holdout
  double bandwidth = 0.0;
};

ToyTrainResult train_toy_score(const Tensor& train_pts,
                               const Tensor& holdout_pts, double lambda_m,
                               const ToyTrainConfig& cfg, std::uint64_t seed);

}  // namespace foogd
