#pragma once

#include <string>
#include <vector>

#include "foogd/autodiff.hpp"
#include "foogd/rng.hpp"
#include "foogd/tensor.hpp"

namespace foogd {

enum class Activation { kRelu, kTanh };

Activation activation_from_string(const std::string& s);
std::string activation_to_string(Activation a);

struct MlpSpec {
  std::vector<std::size_t> widths;  // input, hidden..., output
  Activation activation = Activation::kTanh;

  std::size_t layer_count() const { return widths.size() - 1; }
  std::size_t param_count() const;
  void validate() const;
};

/// Weights [in,out] and biases [out], layer by layer.
struct MlpParams {
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;

  std::size_t tensor_count() const { return weights.size() + biases.size(); }
};

/// He-scaled Gaussian weights, zero biases.
MlpParams init_mlp(const MlpSpec& spec, RngStream& stream);

/// Parameter tensors as tape leaves (requires_grad per flag).
struct MlpVars {
  std::vector<Var> weights;
  std::vector<Var> biases;
};

MlpVars mlp_leaves(Tape& tape, const MlpParams& params, bool requires_grad);

/// Hidden layers activated, last layer linear.
Var forward_mlp(const MlpSpec& spec, const MlpVars& vars, Var x);

/// Feature extractor, classifier head, and noise-conditional score network.
struct ModelBundle {
  MlpSpec spec_f, spec_g, spec_s;
  MlpParams f, g, s;
  std::size_t latent_dim = 0;
  std::size_t classes = 0;

  std::size_t param_count() const;
  void validate() const;
};

/// Dims must agree: head input = latent dim = score-net data input, and the
/// score net takes one extra input column for log sigma.
ModelBundle init_bundle(const MlpSpec& spec_f, const MlpSpec& spec_g,
                        const MlpSpec& spec_s, RngStream& stream);

Var forward_features(const MlpSpec& spec, const MlpVars& f, Var x);
Var forward_logits(const MlpSpec& spec, const MlpVars& g, Var z);

/// Network input is concat(z, log sigma); raw output divided by sigma.
Var forward_score(const MlpSpec& spec, const MlpVars& s, Var z, double sigma);

// No-grad conveniences evaluating on a scratch tape.
Tensor forward_features_value(const ModelBundle& b, const Tensor& x);
Tensor forward_logits_value(const ModelBundle& b, const Tensor& z);
Tensor forward_score_value(const ModelBundle& b, const Tensor& z, double sigma);

/// Deterministic layer-by-layer order: f, then g, then s; within each mlp
/// weight then bias per layer.
Tensor flatten_params(const ModelBundle& b);
ModelBundle unflatten_params(const Tensor& flat, const ModelBundle& tmpl);

std::vector<Tensor*> param_tensors(ModelBundle& b);

}  // namespace foogd
