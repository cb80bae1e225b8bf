#pragma once

#include <stdexcept>
#include <vector>

#include "foogd/tensor.hpp"

namespace foogd {

struct SgdConfig {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

/// One momentum buffer per parameter tensor, allocated on first use.
struct SgdState {
  std::vector<Tensor> buffers;
};

/// g' = g + wd*p; buf = momentum*buf + g'; p -= lr*buf.
inline void sgd_step(std::vector<Tensor>& params,
                     const std::vector<Tensor>& grads, const SgdConfig& cfg,
                     SgdState& state) {
  if (params.size() != grads.size())
    throw std::invalid_argument("sgd_step: param/grad count mismatch");
  if (cfg.lr < 0.0) throw std::invalid_argument("sgd_step: negative lr");
  if (state.buffers.empty())
    for (const auto& p : params) state.buffers.emplace_back(Tensor::zeros(p.shape()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].same_shape(grads[i]))
      throw std::invalid_argument("sgd_step: shape mismatch at param " +
                                  std::to_string(i));
    auto& p = params[i].data();
    const auto& g = grads[i].data();
    auto& buf = state.buffers[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      double gj = g[j] + cfg.weight_decay * p[j];
      buf[j] = cfg.momentum * buf[j] + gj;
      p[j] -= cfg.lr * buf[j];
    }
  }
}

}  // namespace foogd
