#pragma once

#include <vector>

#include "foogd/models.hpp"

namespace foogd {

/// ||s_theta(f_theta(x))|| per row.
std::vector<double> score_norm(const ModelBundle& bundle, const Tensor& X,
                               double sigma_eval);

std::vector<double> score_norm_latent(const ModelBundle& bundle,
                                      const Tensor& Z, double sigma_eval);

/// Smallest in-norm t with fraction(in_norms <= t) >= tpr_target (ceiling
/// order statistic, no interpolation); returns tau = -t.
double calibrate_tau(const std::vector<double>& in_norms,
                     double tpr_target = 0.95);

/// True iff norm > -tau (boundary classified IN).
bool is_out(double norm, double tau);

/// Mann-Whitney rank statistic: fraction of (out, in) pairs with out > in,
/// ties counted 0.5. OUT is the positive class.
double auroc(const std::vector<double>& in_scores,
             const std::vector<double>& out_scores);

/// Fraction of out scores accepted as IN at the 95%-TPR threshold on
/// in scores.
double fpr95(const std::vector<double>& in_scores,
             const std::vector<double>& out_scores, double tpr_target = 0.95);

/// Max softmax probability per row.
std::vector<double> msp(const Tensor& logits);

struct DetectionReport {
  std::vector<double> in_norms, inc_norms, out_norms;
  double auroc = 0.0;
  double fpr95 = 0.0;
  double tau = 0.0;
  double msp_auroc = 0.0;
  double msp_fpr95 = 0.0;
};

/// Score-norm and MSP metrics on identical splits. MSP is an IN-score, so
/// it is negated before entering the OUT-score conventions.
DetectionReport build_report(const ModelBundle& bundle, const Tensor& in_set,
                             const Tensor& inc_set, const Tensor& out_set,
                             double sigma_eval);

}  // namespace foogd
