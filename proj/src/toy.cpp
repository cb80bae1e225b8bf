#include "foogd/toy.hpp"

#include <algorithm>

namespace foogd {

ModelBundle identity_feature_bundle(std::size_t dim,
                                    std::vector<std::size_t> hidden_s,
                                    std::uint64_t seed) {
  MlpSpec spec_f{{dim, dim}, Activation::kTanh};
  MlpSpec spec_g{{dim, 2}, Activation::kTanh};
  MlpSpec spec_s;
  spec_s.widths.push_back(dim + 1);
  for (auto h : hidden_s) spec_s.widths.push_back(h);
  spec_s.widths.push_back(dim);
  RngStream stream(seed, "toy-init");
  ModelBundle b = init_bundle(spec_f, spec_g, spec_s, stream);
  // single linear layer pinned to the identity
  b.f.weights[0] = Tensor::zeros({dim, dim});
  for (std::size_t i = 0; i < dim; ++i) b.f.weights[0].at(i, i) = 1.0;
  b.f.biases[0] = Tensor::zeros({dim});
  return b;
}

ToyTrainResult train_toy_score(const Tensor& train_pts,
                               const Tensor& holdout_pts, double lambda_m,
                               const ToyTrainConfig& cfg, std::uint64_t seed) {
  ToyTrainResult res;
  res.model = identity_feature_bundle(train_pts.cols(), {128, 128}, seed);

  Sm3dConfig smd;
  smd.lambda_m = lambda_m;
  smd.sigmas = cfg.sigmas;
  SgdState state;
  RngStream stream(seed, "toy-train");
  RngStream batch_stream = stream.child("batches");

  std::size_t n = train_pts.rows(), d = train_pts.cols();
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    Tensor X({std::min(cfg.batch_size, n), d});
    for (std::size_t i = 0; i < X.rows(); ++i) {
      std::size_t pick = batch_stream.next_below(n);
      for (std::size_t c = 0; c < d; ++c) X.at(i, c) = train_pts.at(pick, c);
    }
    RngStream step_stream = stream.child("step/" + std::to_string(step));
    score_update_step(res.model, X, smd, cfg.train_langevin, cfg.optimizer,
                      state, step_stream);
  }

  LangevinConfig eval_cfg = cfg.train_langevin;
  eval_cfg.steps = cfg.eval_langevin_steps;
  eval_cfg.backprop_full_chain = false;
  RngStream eval_stream(seed, "toy-eval");
  Tensor gen =
      langevin_sample_value(res.model, cfg.eval_samples, eval_cfg, eval_stream);
  res.bandwidth = median_bandwidth({&holdout_pts, &gen});
  res.holdout_mmd = mmd_value(holdout_pts, gen, res.bandwidth);
  return res;
}

}  // namespace foogd
