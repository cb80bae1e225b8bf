#include "foogd/federation.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <stdexcept>
#include <thread>

namespace foogd {

namespace {

// Marsaglia-Tsang gamma sampler; alpha < 1 handled by the boost identity.
double gamma_sample(double alpha, RngStream& rng) {
  if (alpha < 1.0) {
    double u = rng.next_uniform();
    return gamma_sample(alpha + 1.0, rng) * std::pow(u, 1.0 / alpha);
  }
  double d = alpha - 1.0 / 3.0;
  double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x = rng.next_gaussian();
    double v = 1.0 + c * x;
    if (v <= 0.0) continue;
    v = v * v * v;
    double u = rng.next_uniform();
    if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v;
  }
}

std::vector<double> dirichlet_draw(std::size_t K, double alpha,
                                   RngStream& rng) {
  std::vector<double> p(K);
  double s = 0.0;
  for (auto& v : p) {
    v = gamma_sample(alpha, rng);
    s += v;
  }
  for (auto& v : p) v /= s;
  return p;
}

}  // namespace

Partition dirichlet_partition(const std::vector<std::size_t>& labels,
                              std::size_t K, double alpha, RngStream& stream) {
  if (labels.empty()) throw std::invalid_argument("dirichlet_partition: empty dataset");
  if (K < 1) throw std::invalid_argument("dirichlet_partition: K < 1");
  if (alpha <= 0.0) throw std::invalid_argument("dirichlet_partition: alpha <= 0");
  std::size_t classes = *std::max_element(labels.begin(), labels.end()) + 1;

  Partition part;
  part.alpha = alpha;
  part.client_indices.assign(K, {});
  part.class_proportions.assign(classes, std::vector<double>(K, 0.0));

  for (std::size_t j = 0; j < classes; ++j) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == j) members.push_back(i);
    if (members.empty()) continue;

    RngStream class_stream = stream.child("class/" + std::to_string(j));
    std::vector<double> p = dirichlet_draw(K, alpha, class_stream);
    part.class_proportions[j] = p;

    // shuffle members so assignment blocks are random
    for (std::size_t i = members.size(); i > 1; --i)
      std::swap(members[i - 1], members[class_stream.next_below(i)]);

    // largest-remainder rounding of p * |members|
    std::size_t n = members.size();
    std::vector<std::size_t> counts(K);
    std::vector<std::pair<double, std::size_t>> rema(K);
    std::size_t assigned = 0;
    for (std::size_t k = 0; k < K; ++k) {
      double exact = p[k] * static_cast<double>(n);
      counts[k] = static_cast<std::size_t>(std::floor(exact));
      assigned += counts[k];
      rema[k] = {exact - std::floor(exact), k};
    }
    std::sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;  // deterministic tie-break by client id
    });
    for (std::size_t r = 0; assigned < n; ++r, ++assigned) ++counts[rema[r % K].second];

    std::size_t at = 0;
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t c = 0; c < counts[k]; ++c)
        part.client_indices[k].push_back(members[at++]);
  }
  for (auto& idx : part.client_indices) std::sort(idx.begin(), idx.end());
  return part;
}

void FederationConfig::validate() const {
  if (clients < 1) throw std::invalid_argument("FederationConfig: clients < 1");
  if (local_epochs < 1)
    throw std::invalid_argument("FederationConfig: local_epochs < 1");
  if (batch_size < 1)
    throw std::invalid_argument("FederationConfig: batch_size < 1");
  if (participation <= 0.0 || participation > 1.0)
    throw std::invalid_argument("FederationConfig: participation outside (0,1]");
  smd.validate();
  langevin.validate();
  sag.validate();
}

namespace {

Tensor gather_rows(const Tensor& X, const std::vector<std::size_t>& idx) {
  std::size_t d = X.cols();
  Tensor out({idx.size(), d});
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t c = 0; c < d; ++c) out.at(i, c) = X.at(idx[i], c);
  return out;
}

}  // namespace

ClientRecord client_update(ModelBundle& local, const TrainData& data,
                           const std::vector<std::size_t>& indices,
                           const FederationConfig& cfg, std::size_t client_id,
                           std::size_t round) {
  ClientRecord rec;
  rec.client_id = client_id;
  if (indices.empty()) return rec;
  RngStream stream(cfg.seed, "client/" + std::to_string(client_id) +
                                 "/round/" + std::to_string(round));
  SgdState score_state, feature_state;
  std::vector<std::size_t> order = indices;
  for (std::size_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    RngStream shuffle = stream.child("shuffle/" + std::to_string(epoch));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle.next_below(i)]);
    std::size_t batches = (order.size() + cfg.batch_size - 1) / cfg.batch_size;
    for (std::size_t b = 0; b < batches; ++b) {
      std::size_t lo = b * cfg.batch_size;
      std::size_t hi = std::min(order.size(), lo + cfg.batch_size);
      std::vector<std::size_t> batch_idx(order.begin() + lo,
                                         order.begin() + hi);
      Tensor X = gather_rows(data.X, batch_idx);
      std::vector<std::size_t> Y;
      for (auto i : batch_idx) Y.push_back(data.labels[i]);

      std::string tag = std::to_string(epoch) + "/" + std::to_string(b);
      double gnorm = 0.0;
      RngStream smd_stream = stream.child("smd/" + tag);
      Sm3dParts sp = score_update_step(local, X, cfg.smd, cfg.langevin,
                                       cfg.optimizer, score_state, smd_stream,
                                       &gnorm);
      rec.max_grad_norm = std::max(rec.max_grad_norm, gnorm);
      RngStream sag_stream = stream.child("sag/" + tag);
      SagParts fp = feature_update_step(local, X, Y, cfg.sag, cfg.optimizer,
                                        feature_state, sag_stream, &gnorm);
      rec.max_grad_norm = std::max(rec.max_grad_norm, gnorm);
      rec.dsm += sp.dsm;
      rec.mmd += sp.mmd;
      rec.smd_total += sp.total;
      rec.cross_entropy += fp.cross_entropy;
      rec.ksd += fp.ksd;
      rec.sag_total += fp.total;
      ++rec.steps;
    }
  }
  if (rec.steps > 0) {
    double inv = 1.0 / static_cast<double>(rec.steps);
    rec.dsm *= inv;
    rec.mmd *= inv;
    rec.smd_total *= inv;
    rec.cross_entropy *= inv;
    rec.ksd *= inv;
    rec.sag_total *= inv;
  }
  return rec;
}

ModelBundle aggregate(const std::vector<ModelBundle>& bundles,
                      const std::vector<double>& weights) {
  if (bundles.empty() || bundles.size() != weights.size())
    throw std::invalid_argument("aggregate: bundle/weight count mismatch");
  double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (std::fabs(wsum - 1.0) > 1e-9)
    throw std::invalid_argument("aggregate: weights sum to " +
                                std::to_string(wsum));
  Tensor acc({bundles[0].param_count()});
  for (std::size_t k = 0; k < bundles.size(); ++k) {
    Tensor flat = flatten_params(bundles[k]);
    if (flat.size() != acc.size())
      throw std::invalid_argument("aggregate: shape mismatch at bundle " +
                                  std::to_string(k));
    for (std::size_t i = 0; i < flat.size(); ++i)
      acc[i] += weights[k] * flat[i];
  }
  return unflatten_params(acc, bundles[0]);
}

std::uint64_t bundle_checksum(const ModelBundle& b) {
  Tensor flat = flatten_params(b);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (double v : flat.data()) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    for (int s = 0; s < 64; s += 8) {
      h ^= (bits >> s) & 0xff;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

std::pair<double, double> divergence_diagnostic(
    const ModelBundle& global, const std::vector<ModelBundle>& clients,
    const std::vector<double>& weights, double lr, std::size_t sync_gap,
    double max_grad_norm) {
  Tensor g = flatten_params(global);
  double lhs = 0.0;
  for (std::size_t k = 0; k < clients.size(); ++k) {
    Tensor c = flatten_params(clients[k]);
    double sq = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      double diff = g[i] - c[i];
      sq += diff * diff;
    }
    lhs += weights[k] * sq;
  }
  double e1 = static_cast<double>(sync_gap) - 1.0;
  double rhs = 4.0 * lr * lr * e1 * e1 * max_grad_norm * max_grad_norm;
  return {lhs, rhs};
}

RunResult run_rounds(const FederationConfig& cfg, const Partition& partition,
                     const TrainData& data, const ModelBundle& init) {
  cfg.validate();
  if (partition.clients() != cfg.clients)
    throw std::invalid_argument("run_rounds: partition has " +
                                std::to_string(partition.clients()) +
                                " clients, config says " +
                                std::to_string(cfg.clients));
  RunResult result;
  result.global = init;

  // weights from dataset sizes
  std::size_t total = 0;
  for (const auto& idx : partition.client_indices) total += idx.size();
  std::vector<double> full_weights(cfg.clients);
  for (std::size_t k = 0; k < cfg.clients; ++k)
    full_weights[k] = static_cast<double>(partition.client_indices[k].size()) /
                      static_cast<double>(total);

  // MMD at init, recorded for the Theorem-1 style bound report
  {
    RngStream init_stream(cfg.seed, "init-mmd");
    std::size_t probe =
        std::min<std::size_t>(cfg.batch_size, data.X.rows());
    std::vector<std::size_t> idx(probe);
    for (std::size_t i = 0; i < probe; ++i) idx[i] = i;
    Tensor Z = forward_features_value(result.global, gather_rows(data.X, idx));
    Tensor Zg = langevin_sample_value(result.global, probe, cfg.langevin,
                                     init_stream);
    double h = median_bandwidth({&Z, &Zg});
    result.initial_mmd = mmd_value(Z, Zg, h);
  }

  for (std::size_t round = 0; round < cfg.rounds; ++round) {
    // participation subset, uniform without replacement
    std::vector<std::size_t> selected(cfg.clients);
    std::iota(selected.begin(), selected.end(), 0);
    std::size_t m = std::max<std::size_t>(
        1, static_cast<std::size_t>(
               std::round(cfg.participation * static_cast<double>(cfg.clients))));
    if (m < cfg.clients) {
      RngStream pick(cfg.seed, "participation/" + std::to_string(round));
      for (std::size_t i = 0; i < m; ++i)
        std::swap(selected[i], selected[i + pick.next_below(cfg.clients - i)]);
      selected.resize(m);
      std::sort(selected.begin(), selected.end());
    }

    std::vector<ModelBundle> locals(selected.size(), result.global);
    std::vector<ClientRecord> records(selected.size());
    auto work = [&](std::size_t slot) {
      std::size_t k = selected[slot];
      records[slot] =
          client_update(locals[slot], data, partition.client_indices[k], cfg,
                        k, round);
      if (!std::isfinite(records[slot].smd_total) ||
          !std::isfinite(records[slot].sag_total))
        throw std::runtime_error("run_rounds: NaN loss at round " +
                                 std::to_string(round) + " client " +
                                 std::to_string(k));
    };
    std::size_t nthreads = std::max<std::size_t>(1, cfg.threads);
    if (nthreads == 1 || selected.size() == 1) {
      for (std::size_t i = 0; i < selected.size(); ++i) work(i);
    } else {
      std::vector<std::thread> pool;
      std::size_t per = (selected.size() + nthreads - 1) / nthreads;
      for (std::size_t t = 0; t < nthreads; ++t) {
        std::size_t lo = t * per, hi = std::min(selected.size(), lo + per);
        if (lo >= hi) break;
        pool.emplace_back([&, lo, hi] {
          for (std::size_t i = lo; i < hi; ++i) work(i);
        });
      }
      for (auto& th : pool) th.join();
    }

    for (const auto& r : records)
      result.max_grad_norm = std::max(result.max_grad_norm, r.max_grad_norm);

    // weights renormalized over the participating subset
    std::vector<double> weights(selected.size());
    double wsum = 0.0;
    for (std::size_t i = 0; i < selected.size(); ++i)
      wsum += full_weights[selected[i]];
    for (std::size_t i = 0; i < selected.size(); ++i)
      weights[i] = full_weights[selected[i]] / wsum;

    RoundRecord rr;
    rr.round = round;
    rr.clients = records;
    // the sync gap E counts local optimizer steps, so a client that ran S
    // steps since the last aggregation has drifted over E - 1 = S of them
    std::size_t sync_gap = 1;
    for (const auto& rec : records)
      sync_gap = std::max(sync_gap, rec.steps + 1);
    auto [lhs, rhs] = divergence_diagnostic(
        result.global, locals, weights, cfg.optimizer.lr, sync_gap,
        result.max_grad_norm);
    rr.divergence_lhs = lhs;
    rr.divergence_rhs = rhs;

    result.global = aggregate(locals, weights);
    rr.model_checksum = bundle_checksum(result.global);
    result.history.push_back(std::move(rr));
  }
  return result;
}

double classification_accuracy(const ModelBundle& b, const Tensor& X,
                               const std::vector<std::size_t>& labels) {
  if (X.rows() == 0) throw std::invalid_argument("accuracy: empty split");
  Tensor logits = forward_logits_value(b, forward_features_value(b, X));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < X.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < logits.cols(); ++j)
      if (logits.at(i, j) > logits.at(i, best)) best = j;
    if (best == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(X.rows());
}

WeightedEval evaluate_weighted(const ModelBundle& global,
                               const std::vector<EvalSplit>& in_splits,
                               const std::vector<EvalSplit>& inc_splits,
                               const Tensor& out_set, double sigma_eval,
                               bool pooled_detection) {
  if (in_splits.empty()) throw std::invalid_argument("evaluate_weighted: no splits");
  WeightedEval ev;
  std::size_t total = 0;
  for (const auto& s : in_splits) total += s.X.rows();
  if (total == 0) throw std::invalid_argument("evaluate_weighted: empty splits");

  std::vector<double> out_norms = score_norm(global, out_set, sigma_eval);
  Tensor out_logits =
      forward_logits_value(global, forward_features_value(global, out_set));
  std::vector<double> out_msp = msp(out_logits);
  for (auto& v : out_msp) v = -v;

  std::vector<double> pooled_in_norms, pooled_in_msp;
  for (std::size_t k = 0; k < in_splits.size(); ++k) {
    const auto& split = in_splits[k];
    double w = static_cast<double>(split.X.rows()) / static_cast<double>(total);
    if (split.X.rows() == 0) continue;
    double acc = classification_accuracy(global, split.X, split.labels);
    ev.client_acc_in.push_back(acc);
    ev.acc_in += w * acc;
    if (k < inc_splits.size() && inc_splits[k].X.rows() > 0) {
      double acc_c = classification_accuracy(global, inc_splits[k].X,
                                             inc_splits[k].labels);
      ev.client_acc_inc.push_back(acc_c);
      ev.acc_inc += w * acc_c;
    }
    std::vector<double> in_norms = score_norm(global, split.X, sigma_eval);
    std::vector<double> in_msp = msp(
        forward_logits_value(global, forward_features_value(global, split.X)));
    for (auto& v : in_msp) v = -v;
    if (pooled_detection) {
      pooled_in_norms.insert(pooled_in_norms.end(), in_norms.begin(),
                             in_norms.end());
      pooled_in_msp.insert(pooled_in_msp.end(), in_msp.begin(), in_msp.end());
    } else {
      ev.auroc += w * auroc(in_norms, out_norms);
      ev.fpr95 += w * fpr95(in_norms, out_norms);
      ev.msp_auroc += w * auroc(in_msp, out_msp);
      ev.msp_fpr95 += w * fpr95(in_msp, out_msp);
    }
  }
  if (pooled_detection) {
    ev.auroc = auroc(pooled_in_norms, out_norms);
    ev.fpr95 = fpr95(pooled_in_norms, out_norms);
    ev.msp_auroc = auroc(pooled_in_msp, out_msp);
    ev.msp_fpr95 = fpr95(pooled_in_msp, out_msp);
  }
  return ev;
}

BoundReport dsm_bound_report(const ModelBundle& bundle, double sigma,
                             std::size_t batch_size, std::size_t dataset_size,
                             double measured_c, RngStream& stream,
                             std::size_t mc_samples) {
  BoundReport r;
  r.sigma = sigma;
  r.mmd_bound_c = measured_c;
  double d = static_cast<double>(bundle.latent_dim);
  Tensor Z = stream.gaussian({mc_samples, bundle.latent_dim});
  Tensor S = forward_score_value(bundle, Z, sigma);
  double acc = 0.0;
  for (std::size_t i = 0; i < mc_samples; ++i)
    for (std::size_t c = 0; c < bundle.latent_dim; ++c) {
      double diff = S.at(i, c) + Z.at(i, c);  // true score of N(0,I) is -z
      acc += diff * diff;
    }
  r.lhs = acc / static_cast<double>(mc_samples);
  r.rhs = d / (sigma * sigma) - d +
          (static_cast<double>(dataset_size) / static_cast<double>(batch_size)) *
              measured_c;
  return r;
}

}  // namespace foogd
