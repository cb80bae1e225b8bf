#include "foogd/sag.hpp"

#include <cmath>
#include <stdexcept>

namespace foogd {

KernelTerms kernel_terms(const std::vector<double>& z,
                         const std::vector<double>& zp, double h) {
  if (h <= 0.0) throw std::domain_error("kernel_terms: h <= 0");
  if (z.size() != zp.size())
    throw std::invalid_argument("kernel_terms: dim mismatch");
  std::size_t d = z.size();
  double r2 = 0.0;
  for (std::size_t c = 0; c < d; ++c) r2 += (z[c] - zp[c]) * (z[c] - zp[c]);
  KernelTerms t;
  t.k = std::exp(-r2 / h);
  t.grad_z.resize(d);
  t.grad_zp.resize(d);
  for (std::size_t c = 0; c < d; ++c) {
    t.grad_z[c] = -(2.0 / h) * (z[c] - zp[c]) * t.k;
    t.grad_zp[c] = -t.grad_z[c];
  }
  t.trace = (2.0 * d / h) * t.k - (4.0 / (h * h)) * r2 * t.k;
  return t;
}

double ksd_pair_term(const std::vector<double>& zi,
                     const std::vector<double>& zj,
                     const std::vector<double>& si,
                     const std::vector<double>& sj, double h) {
  KernelTerms t = kernel_terms(zi, zj, h);
  std::size_t d = zi.size();
  double u = 0.0;
  double ss = 0.0;
  for (std::size_t c = 0; c < d; ++c) ss += si[c] * sj[c];
  u += ss * t.k;
  for (std::size_t c = 0; c < d; ++c) u += si[c] * t.grad_zp[c];
  for (std::size_t c = 0; c < d; ++c) u += sj[c] * t.grad_z[c];
  u += t.trace;
  return u;
}

namespace {

std::vector<double> row_of(const Tensor& T, std::size_t i) {
  std::size_t d = T.cols();
  return std::vector<double>(T.data().begin() + i * d,
                             T.data().begin() + (i + 1) * d);
}

double ksd_forward(const Tensor& Z, const Tensor& S, double h,
                   bool v_statistic) {
  std::size_t B = Z.rows();
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t j = 0; j < B; ++j) {
      if (!v_statistic && i == j) continue;
      sum += ksd_pair_term(row_of(Z, i), row_of(Z, j), row_of(S, i),
                           row_of(S, j), h);
      ++pairs;
    }
  return sum / static_cast<double>(pairs);
}

}  // namespace

Var ksd(Var Zhat, Var S, double h, bool v_statistic) {
  if (h <= 0.0) throw std::domain_error("ksd: h <= 0");
  if (Zhat.value().rows() < 2)
    throw std::invalid_argument("ksd: need at least 2 samples");
  auto prim = register_custom_primitive(
      "ksd",
      [h, v_statistic](const std::vector<Tensor>& in) {
        return Tensor::scalar(ksd_forward(in[0], in[1], h, v_statistic));
      },
      [h, v_statistic](const Tensor& up, const std::vector<Tensor>& in,
                       const Tensor&) {
        const Tensor& Z = in[0];
        const Tensor& S = in[1];
        std::size_t B = Z.rows(), d = Z.cols();
        Tensor gz(Z.shape());
        Tensor gs(S.shape());
        std::size_t pairs =
            v_statistic ? B * B : B * (B - 1);
        double g = up[0] / static_cast<double>(pairs);
        for (std::size_t i = 0; i < B; ++i)
          for (std::size_t j = 0; j < B; ++j) {
            if (!v_statistic && i == j) continue;
            // delta = z_i - z_j; everything depends on the pair only
            // through delta, so du/dz_j = -du/dz_i.
            double r2 = 0.0, sisj = 0.0, si_dot = 0.0, sj_dot = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
              double delta = Z[i * d + c] - Z[j * d + c];
              r2 += delta * delta;
              sisj += S[i * d + c] * S[j * d + c];
              si_dot += S[i * d + c] * delta;
              sj_dot += S[j * d + c] * delta;
            }
            double k = std::exp(-r2 / h);
            double h2 = h * h;
            // coefficient of delta in du/dz_i
            double cd = -(2.0 / h) * sisj * k -
                        (4.0 / h2) * si_dot * k + (4.0 / h2) * sj_dot * k -
                        (4.0 * d / h2) * k - (8.0 / h2) * k +
                        (8.0 / (h2 * h)) * r2 * k;
            for (std::size_t c = 0; c < d; ++c) {
              double delta = Z[i * d + c] - Z[j * d + c];
              double dz = cd * delta + (2.0 / h) * k * S[i * d + c] -
                          (2.0 / h) * k * S[j * d + c];
              gz[i * d + c] += g * dz;
              gz[j * d + c] -= g * dz;
              // du/ds_i = s_j k + (2/h) delta k ; du/ds_j = s_i k - (2/h) delta k
              gs[i * d + c] +=
                  g * (S[j * d + c] * k + (2.0 / h) * delta * k);
              gs[j * d + c] +=
                  g * (S[i * d + c] * k - (2.0 / h) * delta * k);
            }
          }
        return std::vector<Tensor>{gz, gs};
      });
  return custom_op(prim, {Zhat, S});
}

double ksd_value(
    const Tensor& Zhat,
    const std::function<std::vector<double>(const std::vector<double>&)>& score,
    double h, bool v_statistic) {
  std::size_t B = Zhat.rows();
  if (B < 2) throw std::invalid_argument("ksd: need at least 2 samples");
  Tensor S(Zhat.shape());
  std::size_t d = Zhat.cols();
  for (std::size_t i = 0; i < B; ++i) {
    auto s = score(row_of(Zhat, i));
    for (std::size_t c = 0; c < d; ++c) S[i * d + c] = s[c];
  }
  return ksd_forward(Zhat, S, h, v_statistic);
}

double ksd_value(const ModelBundle& bundle, const Tensor& Zhat, double h,
                 double sigma_eval, bool v_statistic) {
  Tensor S = forward_score_value(bundle, Zhat, sigma_eval);
  return ksd_forward(Zhat, S, h, v_statistic);
}

SteinResidual stein_identity_residual(
    const std::function<double(double)>& score_1d,
    const std::vector<double>& samples, const std::vector<double>& anchors,
    double h) {
  if (samples.empty() || anchors.empty())
    throw std::invalid_argument("stein_identity_residual: empty input");
  // phi(x) = k(x, a) = exp(-(x-a)^2/h); phi'(x) = -(2/h)(x-a)k
  std::vector<double> per_sample(samples.size(), 0.0);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    double x = samples[i];
    double acc = 0.0;
    for (double a : anchors) {
      double k = std::exp(-(x - a) * (x - a) / h);
      acc += k * score_1d(x) - (2.0 / h) * (x - a) * k;
    }
    per_sample[i] = acc / static_cast<double>(anchors.size());
  }
  double mean = 0.0;
  for (double v : per_sample) mean += v;
  mean /= static_cast<double>(per_sample.size());
  double var = 0.0;
  for (double v : per_sample) var += (v - mean) * (v - mean);
  var /= static_cast<double>(per_sample.size() - 1);
  SteinResidual r;
  r.mean = mean;
  r.stderr_ = std::sqrt(var / static_cast<double>(per_sample.size()));
  return r;
}

Tensor augment(const Tensor& X, const AugmentSpec& spec, RngStream& stream) {
  std::size_t d = X.cols();
  Tensor out = X;
  switch (spec.family) {
    case AugmentFamily::kRotation: {
      if (d % 2 != 0)
        throw std::invalid_argument("augment: rotation needs even input dim");
      // deterministic rotation by `magnitude` degrees
      double a = spec.magnitude * M_PI / 180.0;
      double ca = std::cos(a), sa = std::sin(a);
      for (std::size_t i = 0; i < X.rows(); ++i) {
        for (std::size_t p = 0; p + 1 < d; p += 2) {
          double x = out.at(i, p), y = out.at(i, p + 1);
          out.at(i, p) = ca * x - sa * y;
          out.at(i, p + 1) = sa * x + ca * y;
        }
      }
      break;
    }
    case AugmentFamily::kGaussianJitter: {
      if (spec.magnitude == 0.0) break;
      for (auto& v : out.data()) v += spec.magnitude * stream.next_gaussian();
      break;
    }
    case AugmentFamily::kScale: {
      double f = 1.0 + spec.magnitude * (2.0 * stream.next_uniform() - 1.0);
      for (auto& v : out.data()) v *= f;
      break;
    }
    case AugmentFamily::kCompose: {
      AugmentSpec rot = spec;
      rot.family = AugmentFamily::kRotation;
      out = augment(out, rot, stream);
      AugmentSpec jit = spec;
      jit.family = AugmentFamily::kGaussianJitter;
      jit.magnitude = spec.jitter_magnitude;
      out = augment(out, jit, stream);
      break;
    }
  }
  return out;
}

void SagConfig::validate() const {
  if (lambda_a < 0.0) throw std::invalid_argument("SagConfig: lambda_a < 0");
  if (sigma_eval <= 0.0)
    throw std::invalid_argument("SagConfig: sigma_eval <= 0");
  if (bandwidth == BandwidthPolicy::kFixed && fixed_bandwidth <= 0.0)
    throw std::invalid_argument("SagConfig: fixed bandwidth <= 0");
}

Var sag_loss(const ModelBundle& bundle, const MlpVars& f, const MlpVars& g,
             const MlpVars& s_frozen, Tape& tape, const Tensor& X,
             const std::vector<std::size_t>& Y, const SagConfig& cfg,
             RngStream& stream, SagParts* parts) {
  cfg.validate();
  Var Z = forward_features(bundle.spec_f, f, tape.constant(X));
  Var ce = cross_entropy(forward_logits(bundle.spec_g, g, Z), Y);
  Var total = ce;
  double ksd_val = 0.0, h_used = 0.0;
  if (cfg.lambda_a != 0.0) {
    RngStream aug_stream = stream.child(cfg.augment.stream_label);
    Tensor Xhat = augment(X, cfg.augment, aug_stream);
    Var Zhat = forward_features(bundle.spec_f, f, tape.constant(Xhat));
    Var S = forward_score(bundle.spec_s, s_frozen, Zhat, cfg.sigma_eval);
    // bandwidth from the augmented batch, detached from the gradient path
    double h = cfg.bandwidth == BandwidthPolicy::kMedian
                   ? median_bandwidth(Zhat.value())
                   : cfg.fixed_bandwidth;
    Var ksd_term = ksd(Zhat, S, h, cfg.ksd_v_statistic);
    total = add(ce, scale(ksd_term, cfg.lambda_a));
    ksd_val = ksd_term.value().item();
    h_used = h;
  }
  if (parts) {
    parts->cross_entropy = ce.value().item();
    parts->ksd = ksd_val;
    parts->total = total.value().item();
    parts->bandwidth = h_used;
  }
  return total;
}

SagParts feature_update_step(ModelBundle& bundle, const Tensor& X,
                             const std::vector<std::size_t>& Y,
                             const SagConfig& cfg, const SgdConfig& opt,
                             SgdState& state, RngStream& stream,
                             double* grad_norm) {
  Tape tape;
  MlpVars f = mlp_leaves(tape, bundle.f, true);
  MlpVars g = mlp_leaves(tape, bundle.g, true);
  MlpVars s = mlp_leaves(tape, bundle.s, false);
  SagParts parts;
  Var loss = sag_loss(bundle, f, g, s, tape, X, Y, cfg, stream, &parts);
  tape.backward(loss);

  std::vector<Tensor> params, grads;
  auto collect = [&](MlpParams& mp, const MlpVars& mv) {
    for (std::size_t l = 0; l < mp.weights.size(); ++l) {
      params.push_back(mp.weights[l]);
      grads.push_back(tape.grad(mv.weights[l]));
      params.push_back(mp.biases[l]);
      grads.push_back(tape.grad(mv.biases[l]));
    }
  };
  collect(bundle.f, f);
  collect(bundle.g, g);
  if (grad_norm) {
    double sq = 0.0;
    for (const auto& gr : grads)
      for (double v : gr.data()) sq += v * v;
    *grad_norm = std::sqrt(sq);
  }
  sgd_step(params, grads, opt, state);
  std::size_t at = 0;
  for (MlpParams* mp : {&bundle.f, &bundle.g})
    for (std::size_t l = 0; l < mp->weights.size(); ++l) {
      mp->weights[l] = params[at++];
      mp->biases[l] = params[at++];
    }
  return parts;
}

}  // namespace foogd
