#include "foogd/smd.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace foogd {

void LangevinConfig::validate() const {
  if (steps < 1) throw std::invalid_argument("LangevinConfig: steps < 1");
  if (step_size < 0.0)
    throw std::invalid_argument("LangevinConfig: negative step size");
  if (sigma <= 0.0) throw std::invalid_argument("LangevinConfig: sigma <= 0");
}

void Sm3dConfig::validate() const {
  if (lambda_m < 0.0 || lambda_m > 1.0)
    throw std::invalid_argument("Sm3dConfig: lambda_m outside [0,1]");
  if (sigmas.empty())
    throw std::invalid_argument("Sm3dConfig: empty sigma list");
  for (double s : sigmas)
    if (s <= 0.0) throw std::invalid_argument("Sm3dConfig: sigma <= 0");
  if (bandwidth == BandwidthPolicy::kFixed && fixed_bandwidth <= 0.0)
    throw std::invalid_argument("Sm3dConfig: fixed bandwidth <= 0");
}

std::pair<Tensor, Tensor> perturb(const Tensor& Z, double sigma,
                                  RngStream& stream) {
  if (sigma <= 0.0) throw std::domain_error("perturb: sigma <= 0");
  Tensor V = stream.gaussian(Z.shape());
  Tensor Zt = Z;
  for (std::size_t i = 0; i < Zt.size(); ++i) Zt[i] += sigma * V[i];
  return {std::move(Zt), std::move(V)};
}

Var dsm_loss(const MlpSpec& spec_s, const MlpVars& s, const Tensor& Z,
             double sigma, RngStream& stream) {
  if (Z.rows() == 0) throw std::invalid_argument("dsm_loss: empty batch");
  Tape& tape = *s.weights.front().tape;
  auto [Zt, V] = perturb(Z, sigma, stream);
  Var score = forward_score(spec_s, s, tape.constant(Zt), sigma);
  // target = -v/sigma
  Tensor target = V;
  for (auto& v : target.data()) v = -v / sigma;
  Var diff = sub(score, tape.constant(target));
  return scale(sum(square(diff)), 0.5 / static_cast<double>(Z.rows()));
}

Var dsm_loss_multi(const MlpSpec& spec_s, const MlpVars& s, const Tensor& Z,
                   const std::vector<double>& sigmas, RngStream& stream) {
  Var total = dsm_loss(spec_s, s, Z, sigmas[0], stream);
  for (std::size_t i = 1; i < sigmas.size(); ++i)
    total = add(total, dsm_loss(spec_s, s, Z, sigmas[i], stream));
  return scale(total, 1.0 / static_cast<double>(sigmas.size()));
}

namespace {

void check_chain(const Tensor& z, int step) {
  for (double v : z.data())
    if (!std::isfinite(v))
      throw std::runtime_error("langevin_sample: chain diverged at step " +
                               std::to_string(step));
}

}  // namespace

Var langevin_sample(const MlpSpec& spec_s, const MlpVars& s, Tape& tape,
                    std::size_t batch, std::size_t dim,
                    const LangevinConfig& cfg, RngStream& stream) {
  cfg.validate();
  Var z = tape.constant(stream.gaussian({batch, dim}));
  double root_eps = std::sqrt(cfg.step_size);
  for (int t = 1; t <= cfg.steps; ++t) {
    Var drift = scale(forward_score(spec_s, s, z, cfg.sigma),
                      cfg.step_size / 2.0);
    Tensor w = stream.gaussian({batch, dim});
    for (auto& v : w.data()) v *= root_eps;
    z = add(add(z, drift), tape.constant(w));
    check_chain(z.value(), t);
  }
  return z;
}

Tensor langevin_sample_value(const ModelBundle& b, std::size_t batch,
                             const LangevinConfig& cfg, RngStream& stream) {
  // value-only chain: mirrors langevin_sample step for step but keeps no
  // tape, so long evaluation chains stay in constant memory
  cfg.validate();
  Tensor z = stream.gaussian({batch, b.latent_dim});
  double root_eps = std::sqrt(cfg.step_size);
  for (int t = 1; t <= cfg.steps; ++t) {
    Tensor s = forward_score_value(b, z, cfg.sigma);
    Tensor w = stream.gaussian(z.shape());
    for (std::size_t i = 0; i < z.size(); ++i) {
      double drift = s[i] * (cfg.step_size / 2.0);
      z[i] = (z[i] + drift) + w[i] * root_eps;
    }
    check_chain(z, t);
  }
  return z;
}

namespace {

double gauss_kernel(const Tensor& A, std::size_t i, const Tensor& B,
                    std::size_t j, std::size_t d, double h) {
  double r2 = 0.0;
  for (std::size_t c = 0; c < d; ++c) {
    double diff = A[i * d + c] - B[j * d + c];
    r2 += diff * diff;
  }
  return std::exp(-r2 / h);
}

// Canonical argument order so the value is bitwise symmetric in (X, Y).
bool mmd_swap_args(const Tensor& X, const Tensor& Y) {
  if (X.rows() != Y.rows()) return Y.rows() < X.rows();
  return std::lexicographical_compare(Y.data().begin(), Y.data().end(),
                                      X.data().begin(), X.data().end());
}

double mmd_forward(const Tensor& Xin, const Tensor& Yin, double h,
                   bool unbiased) {
  bool swapped = mmd_swap_args(Xin, Yin);
  const Tensor& X = swapped ? Yin : Xin;
  const Tensor& Y = swapped ? Xin : Yin;
  std::size_t n = X.rows(), m = Y.rows(), d = X.cols();
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (unbiased && i == j) continue;
      sxx += gauss_kernel(X, i, X, j, d, h);
    }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      sxy += gauss_kernel(X, i, Y, j, d, h);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      if (unbiased && i == j) continue;
      syy += gauss_kernel(Y, i, Y, j, d, h);
    }
  double nn = unbiased ? static_cast<double>(n) * (n - 1)
                       : static_cast<double>(n) * n;
  double mm = unbiased ? static_cast<double>(m) * (m - 1)
                       : static_cast<double>(m) * m;
  return sxx / nn - 2.0 * sxy / (static_cast<double>(n) * m) + syy / mm;
}

}  // namespace

double mmd_value(const Tensor& X, const Tensor& Y, double h, bool unbiased) {
  if (h <= 0.0) throw std::domain_error("mmd: bandwidth <= 0");
  if (X.rows() == 0 || Y.rows() == 0)
    throw std::invalid_argument("mmd: empty set");
  if (X.cols() != Y.cols()) throw std::invalid_argument("mmd: dim mismatch");
  if (unbiased && (X.rows() < 2 || Y.rows() < 2))
    throw std::invalid_argument("mmd: U-statistic needs >= 2 points per set");
  return mmd_forward(X, Y, h, unbiased);
}

Var mmd(Var Xv, Var Yv, double h, bool unbiased) {
  if (h <= 0.0) throw std::domain_error("mmd: bandwidth <= 0");
  auto prim = register_custom_primitive(
      "mmd",
      [h, unbiased](const std::vector<Tensor>& in) {
        return Tensor::scalar(mmd_value(in[0], in[1], h, unbiased));
      },
      [h, unbiased](const Tensor& up, const std::vector<Tensor>& in,
                    const Tensor&) {
        const Tensor& X = in[0];
        const Tensor& Y = in[1];
        std::size_t n = X.rows(), m = Y.rows(), d = X.cols();
        double g = up[0];
        Tensor gx(X.shape());
        Tensor gy(Y.shape());
        double nn = unbiased ? static_cast<double>(n) * (n - 1)
                             : static_cast<double>(n) * n;
        double mm = unbiased ? static_cast<double>(m) * (m - 1)
                             : static_cast<double>(m) * m;
        double cxy = 2.0 / (static_cast<double>(n) * m);
        // d k(a,b)/da = -(2/h)(a-b)k
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;  // zero gradient on the diagonal either way
            double k = gauss_kernel(X, i, X, j, d, h);
            double w = 2.0 * g / nn;  // pair appears as (i,j) and (j,i)
            for (std::size_t c = 0; c < d; ++c)
              gx[i * d + c] +=
                  w * (-(2.0 / h) * (X[i * d + c] - X[j * d + c]) * k);
          }
          for (std::size_t j = 0; j < m; ++j) {
            double k = gauss_kernel(X, i, Y, j, d, h);
            for (std::size_t c = 0; c < d; ++c) {
              double dk = -(2.0 / h) * (X[i * d + c] - Y[j * d + c]) * k;
              gx[i * d + c] += -cxy * g * dk;
              gy[j * d + c] += cxy * g * dk;  // d k/db = -d k/da
            }
          }
        }
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < m; ++j) {
            if (i == j) continue;
            double k = gauss_kernel(Y, i, Y, j, d, h);
            double w = 2.0 * g / mm;
            for (std::size_t c = 0; c < d; ++c)
              gy[i * d + c] +=
                  w * (-(2.0 / h) * (Y[i * d + c] - Y[j * d + c]) * k);
          }
        return std::vector<Tensor>{gx, gy};
      });
  return custom_op(prim, {Xv, Yv});
}

double median_bandwidth(const std::vector<const Tensor*>& sets) {
  std::vector<const double*> rows;
  std::size_t d = 0;
  for (const Tensor* t : sets) {
    d = t->cols();
    for (std::size_t i = 0; i < t->rows(); ++i)
      rows.push_back(t->data().data() + i * d);
  }
  if (rows.size() < 2)
    throw std::invalid_argument("median_bandwidth: need >= 2 points");
  std::vector<double> d2;
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = i + 1; j < rows.size(); ++j) {
      double r2 = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        double diff = rows[i][c] - rows[j][c];
        r2 += diff * diff;
      }
      d2.push_back(r2);
    }
  std::size_t mid = d2.size() / 2;
  std::nth_element(d2.begin(), d2.begin() + mid, d2.end());
  double h = d2[mid];
  if (d2.size() % 2 == 0) {
    double lo = *std::max_element(d2.begin(), d2.begin() + mid);
    h = 0.5 * (lo + h);
  }
  return h > 0.0 ? h : 1.0;
}

double median_bandwidth(const Tensor& X) { return median_bandwidth({&X}); }

Var sm3d_loss(const MlpSpec& spec_s, const MlpVars& s, Tape& tape,
              const Tensor& Z, const Sm3dConfig& cfg,
              const LangevinConfig& lcfg, RngStream& stream, Sm3dParts* parts) {
  cfg.validate();
  lcfg.validate();
  RngStream dsm_stream = stream.child("dsm");
  RngStream langevin_stream = stream.child("langevin");
  Var dsm = dsm_loss_multi(spec_s, s, Z, cfg.sigmas, dsm_stream);

  Var z_gen = langevin_sample(spec_s, s, tape, Z.rows(), Z.cols(), lcfg,
                              langevin_stream);
  if (!lcfg.backprop_full_chain) z_gen = tape.constant(z_gen.value());
  double h = cfg.bandwidth == BandwidthPolicy::kMedian
                 ? median_bandwidth({&Z, &z_gen.value()})
                 : cfg.fixed_bandwidth;
  Var mmd_term = mmd(tape.constant(Z), z_gen, h, cfg.mmd_unbiased);
  Var total =
      add(scale(dsm, 1.0 - cfg.lambda_m), scale(mmd_term, cfg.lambda_m));
  if (parts) {
    parts->dsm = dsm.value().item();
    parts->mmd = mmd_term.value().item();
    parts->total = total.value().item();
    parts->bandwidth = h;
  }
  return total;
}

Sm3dParts score_update_step(ModelBundle& bundle, const Tensor& X,
                            const Sm3dConfig& cfg, const LangevinConfig& lcfg,
                            const SgdConfig& opt, SgdState& state,
                            RngStream& stream, double* grad_norm) {
  Tensor Z = forward_features_value(bundle, X);
  Tape tape;
  MlpVars s = mlp_leaves(tape, bundle.s, true);
  Sm3dParts parts;
  Var loss = sm3d_loss(bundle.spec_s, s, tape, Z, cfg, lcfg, stream, &parts);
  tape.backward(loss);

  std::vector<Tensor> params, grads;
  for (std::size_t l = 0; l < bundle.s.weights.size(); ++l) {
    params.push_back(bundle.s.weights[l]);
    grads.push_back(tape.grad(s.weights[l]));
    params.push_back(bundle.s.biases[l]);
    grads.push_back(tape.grad(s.biases[l]));
  }
  if (grad_norm) {
    double sq = 0.0;
    for (const auto& g : grads)
      for (double v : g.data()) sq += v * v;
    *grad_norm = std::sqrt(sq);
  }
  sgd_step(params, grads, opt, state);
  std::size_t at = 0;
  for (std::size_t l = 0; l < bundle.s.weights.size(); ++l) {
    bundle.s.weights[l] = params[at++];
    bundle.s.biases[l] = params[at++];
  }
  return parts;
}

}  // namespace foogd
