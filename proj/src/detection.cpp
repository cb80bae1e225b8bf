#include "foogd/detection.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace foogd {

std::vector<double> score_norm_latent(const ModelBundle& bundle,
                                      const Tensor& Z, double sigma_eval) {
  if (sigma_eval <= 0.0) throw std::domain_error("score_norm: sigma <= 0");
  Tensor S = forward_score_value(bundle, Z, sigma_eval);
  std::size_t d = S.cols();
  std::vector<double> norms(S.rows());
  for (std::size_t i = 0; i < S.rows(); ++i) {
    double sq = 0.0;
    for (std::size_t c = 0; c < d; ++c) sq += S[i * d + c] * S[i * d + c];
    norms[i] = std::sqrt(sq);
  }
  return norms;
}

std::vector<double> score_norm(const ModelBundle& bundle, const Tensor& X,
                               double sigma_eval) {
  return score_norm_latent(bundle, forward_features_value(bundle, X),
                           sigma_eval);
}

double calibrate_tau(const std::vector<double>& in_norms, double tpr_target) {
  if (in_norms.empty()) throw std::invalid_argument("calibrate_tau: empty");
  if (tpr_target <= 0.0 || tpr_target >= 1.0)
    throw std::invalid_argument("calibrate_tau: tpr_target outside (0,1)");
  std::vector<double> sorted = in_norms;
  std::sort(sorted.begin(), sorted.end());
  std::size_t n = sorted.size();
  std::size_t rank = static_cast<std::size_t>(
      std::ceil(tpr_target * static_cast<double>(n)));
  if (rank == 0) rank = 1;
  return -sorted[rank - 1];
}

bool is_out(double norm, double tau) {
  if (tau >= 0.0) throw std::invalid_argument("is_out: tau must be negative");
  return norm > -tau;
}

double auroc(const std::vector<double>& in_scores,
             const std::vector<double>& out_scores) {
  if (in_scores.empty() || out_scores.empty())
    throw std::invalid_argument("auroc: empty side");
  // Rank-based O((n+m) log(n+m)) form of the pairwise count.
  std::vector<double> all;
  all.reserve(in_scores.size() + out_scores.size());
  all.insert(all.end(), in_scores.begin(), in_scores.end());
  all.insert(all.end(), out_scores.begin(), out_scores.end());
  std::sort(all.begin(), all.end());
  auto mid_rank = [&](double v) {
    auto lo = std::lower_bound(all.begin(), all.end(), v) - all.begin();
    auto hi = std::upper_bound(all.begin(), all.end(), v) - all.begin();
    return 0.5 * static_cast<double>(lo + hi - 1) + 1.0;  // average 1-based rank
  };
  double rank_sum = 0.0;
  for (double v : out_scores) rank_sum += mid_rank(v);
  double m = static_cast<double>(out_scores.size());
  double n = static_cast<double>(in_scores.size());
  double u = rank_sum - m * (m + 1.0) / 2.0;
  return u / (m * n);
}

double fpr95(const std::vector<double>& in_scores,
             const std::vector<double>& out_scores, double tpr_target) {
  if (in_scores.empty() || out_scores.empty())
    throw std::invalid_argument("fpr95: empty side");
  double t = -calibrate_tau(in_scores, tpr_target);
  std::size_t accepted = 0;
  for (double v : out_scores)
    if (v <= t) ++accepted;
  return static_cast<double>(accepted) /
         static_cast<double>(out_scores.size());
}

std::vector<double> msp(const Tensor& logits) {
  if (logits.ndim() != 2 || logits.cols() < 2)
    throw std::invalid_argument("msp: needs at least 2 classes");
  Tensor p = softmax_rows_value(logits);
  std::vector<double> out(p.rows());
  for (std::size_t i = 0; i < p.rows(); ++i) {
    double mx = 0.0;
    for (std::size_t j = 0; j < p.cols(); ++j) mx = std::max(mx, p.at(i, j));
    out[i] = mx;
  }
  return out;
}

DetectionReport build_report(const ModelBundle& bundle, const Tensor& in_set,
                             const Tensor& inc_set, const Tensor& out_set,
                             double sigma_eval) {
  if (in_set.rows() == 0 || out_set.rows() == 0)
    throw std::invalid_argument("build_report: empty split");
  DetectionReport r;
  r.in_norms = score_norm(bundle, in_set, sigma_eval);
  if (inc_set.rows() > 0) r.inc_norms = score_norm(bundle, inc_set, sigma_eval);
  r.out_norms = score_norm(bundle, out_set, sigma_eval);
  r.tau = calibrate_tau(r.in_norms);
  r.auroc = auroc(r.in_norms, r.out_norms);
  r.fpr95 = fpr95(r.in_norms, r.out_norms);

  auto neg_msp = [&](const Tensor& X) {
    std::vector<double> v =
        msp(forward_logits_value(bundle, forward_features_value(bundle, X)));
    for (auto& x : v) x = -x;  // MSP is an IN-score
    return v;
  };
  std::vector<double> in_msp = neg_msp(in_set);
  std::vector<double> out_msp = neg_msp(out_set);
  r.msp_auroc = auroc(in_msp, out_msp);
  r.msp_fpr95 = fpr95(in_msp, out_msp);
  return r;
}

}  // namespace foogd
