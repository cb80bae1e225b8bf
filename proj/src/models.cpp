#include "foogd/models.hpp"

#include <cmath>
#include <stdexcept>

namespace foogd {

Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::kRelu;
  if (s == "tanh") return Activation::kTanh;
  throw std::invalid_argument("unknown activation: " + s);
}

std::string activation_to_string(Activation a) {
  return a == Activation::kRelu ? "relu" : "tanh";
}

void MlpSpec::validate() const {
  if (widths.size() < 2)
    throw std::invalid_argument("MlpSpec: needs at least input and output");
  for (auto w : widths)
    if (w < 1) throw std::invalid_argument("MlpSpec: zero width layer");
}

std::size_t MlpSpec::param_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l)
    n += widths[l] * widths[l + 1] + widths[l + 1];
  return n;
}

MlpParams init_mlp(const MlpSpec& spec, RngStream& stream) {
  spec.validate();
  MlpParams p;
  for (std::size_t l = 0; l + 1 < spec.widths.size(); ++l) {
    std::size_t in = spec.widths[l], out = spec.widths[l + 1];
    Tensor w({in, out});
    double sd = std::sqrt(2.0 / static_cast<double>(in));
    for (auto& v : w.data()) v = sd * stream.next_gaussian();
    p.weights.push_back(std::move(w));
    p.biases.push_back(Tensor::zeros({out}));
  }
  return p;
}

MlpVars mlp_leaves(Tape& tape, const MlpParams& params, bool requires_grad) {
  MlpVars v;
  for (const auto& w : params.weights) v.weights.push_back(tape.leaf(w, requires_grad));
  for (const auto& b : params.biases) v.biases.push_back(tape.leaf(b, requires_grad));
  return v;
}

Var forward_mlp(const MlpSpec& spec, const MlpVars& vars, Var x) {
  if (x.shape().size() != 2 || x.shape()[1] != spec.widths.front())
    throw std::invalid_argument("forward_mlp: input dim mismatch, got " +
                                shape_string(x.shape()));
  Var h = x;
  std::size_t L = vars.weights.size();
  for (std::size_t l = 0; l < L; ++l) {
    h = add(matmul(h, vars.weights[l]), vars.biases[l]);
    if (l + 1 < L)
      h = spec.activation == Activation::kRelu ? relu(h) : tanh_op(h);
  }
  return h;
}

std::size_t ModelBundle::param_count() const {
  return spec_f.param_count() + spec_g.param_count() + spec_s.param_count();
}

void ModelBundle::validate() const {
  spec_f.validate();
  spec_g.validate();
  spec_s.validate();
  if (spec_f.widths.back() != latent_dim ||
      spec_g.widths.front() != latent_dim ||
      spec_s.widths.front() != latent_dim + 1 ||
      spec_s.widths.back() != latent_dim)
    throw std::invalid_argument("ModelBundle: inconsistent dims");
  if (spec_g.widths.back() != classes)
    throw std::invalid_argument("ModelBundle: head output != class count");
  if (spec_s.widths.size() < 3)
    throw std::invalid_argument(
        "ModelBundle: score network needs a hidden layer");
}

ModelBundle init_bundle(const MlpSpec& spec_f, const MlpSpec& spec_g,
                        const MlpSpec& spec_s, RngStream& stream) {
  ModelBundle b;
  b.spec_f = spec_f;
  b.spec_g = spec_g;
  b.spec_s = spec_s;
  b.latent_dim = spec_f.widths.back();
  b.classes = spec_g.widths.back();
  b.validate();
  RngStream sf = stream.child("init/f");
  RngStream sg = stream.child("init/g");
  RngStream ss = stream.child("init/s");
  b.f = init_mlp(spec_f, sf);
  b.g = init_mlp(spec_g, sg);
  b.s = init_mlp(spec_s, ss);
  return b;
}

Var forward_features(const MlpSpec& spec, const MlpVars& f, Var x) {
  return forward_mlp(spec, f, x);
}

Var forward_logits(const MlpSpec& spec, const MlpVars& g, Var z) {
  return forward_mlp(spec, g, z);
}

Var forward_score(const MlpSpec& spec, const MlpVars& s, Var z, double sigma) {
  if (sigma <= 0.0) throw std::domain_error("forward_score: sigma <= 0");
  Tape& tape = *z.tape;
  std::size_t rows = z.shape()[0];
  Var logsig = tape.constant(Tensor::full({rows, 1}, std::log(sigma)));
  Var raw = forward_mlp(spec, s, concat_cols(z, logsig));
  return scale(raw, 1.0 / sigma);
}

Tensor forward_features_value(const ModelBundle& b, const Tensor& x) {
  Tape t;
  return forward_features(b.spec_f, mlp_leaves(t, b.f, false), t.constant(x))
      .value();
}

Tensor forward_logits_value(const ModelBundle& b, const Tensor& z) {
  Tape t;
  return forward_logits(b.spec_g, mlp_leaves(t, b.g, false), t.constant(z))
      .value();
}

Tensor forward_score_value(const ModelBundle& b, const Tensor& z,
                           double sigma) {
  Tape t;
  return forward_score(b.spec_s, mlp_leaves(t, b.s, false), t.constant(z),
                       sigma)
      .value();
}

std::vector<Tensor*> param_tensors(ModelBundle& b) {
  std::vector<Tensor*> out;
  for (MlpParams* m : {&b.f, &b.g, &b.s}) {
    for (std::size_t l = 0; l < m->weights.size(); ++l) {
      out.push_back(&m->weights[l]);
      out.push_back(&m->biases[l]);
    }
  }
  return out;
}

Tensor flatten_params(const ModelBundle& b) {
  Tensor flat({b.param_count()});
  std::size_t at = 0;
  auto& mut = const_cast<ModelBundle&>(b);
  for (Tensor* t : param_tensors(mut))
    for (double v : t->data()) flat[at++] = v;
  return flat;
}

ModelBundle unflatten_params(const Tensor& flat, const ModelBundle& tmpl) {
  if (flat.size() != tmpl.param_count())
    throw std::invalid_argument("unflatten_params: length " +
                                std::to_string(flat.size()) + " != " +
                                std::to_string(tmpl.param_count()));
  ModelBundle out = tmpl;
  std::size_t at = 0;
  for (Tensor* t : param_tensors(out))
    for (double& v : t->data()) v = flat[at++];
  return out;
}

}  // namespace foogd
