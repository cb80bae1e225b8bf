#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "foogd/models.hpp"
#include "foogd/tensor.hpp"

namespace foogd::testutil {

/// Bundle whose score net computes exactly s(z) = A z + c at the given sigma,
/// built from a relu pair trick (relu(x) - relu(-x) == x). The feature
/// extractor is a hand-set identity linear layer; the head is a zero linear
/// layer with 2 classes.
inline ModelBundle exact_linear_bundle(std::size_t d, const Tensor& A,
                                       const std::vector<double>& c,
                                       double sigma) {
  MlpSpec spec_f{{d, d}, Activation::kTanh};
  MlpSpec spec_g{{d, 2}, Activation::kTanh};
  std::size_t w = 2 * (d + 1);
  MlpSpec spec_s{{d + 1, w, d}, Activation::kRelu};
  RngStream stream(0, "exact-linear");
  ModelBundle b = init_bundle(spec_f, spec_g, spec_s, stream);

  b.f.weights[0] = Tensor::zeros({d, d});
  for (std::size_t i = 0; i < d; ++i) b.f.weights[0].at(i, i) = 1.0;
  b.f.biases[0] = Tensor::zeros({d});
  b.g.weights[0] = Tensor::zeros({d, 2});
  b.g.biases[0] = Tensor::zeros({2});

  b.s.weights[0] = Tensor::zeros({d + 1, w});
  for (std::size_t i = 0; i < d + 1; ++i) {
    b.s.weights[0].at(i, i) = 1.0;
    b.s.weights[0].at(i, d + 1 + i) = -1.0;
  }
  b.s.biases[0] = Tensor::zeros({w});
  b.s.weights[1] = Tensor::zeros({w, d});
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t cc = 0; cc < d; ++cc) {
      b.s.weights[1].at(i, cc) = sigma * A.at(i, cc);
      b.s.weights[1].at(d + 1 + i, cc) = -sigma * A.at(i, cc);
    }
  b.s.biases[1] = Tensor::zeros({d});
  for (std::size_t cc = 0; cc < d; ++cc)
    b.s.biases[1][cc] = sigma * c[cc];
  return b;
}

/// Central finite differences of a scalar function of a flat vector.
inline std::vector<double> finite_difference(
    const std::function<double(const std::vector<double>&)>& f,
    std::vector<double> x, double step = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double orig = x[i];
    x[i] = orig + step;
    double hi = f(x);
    x[i] = orig - step;
    double lo = f(x);
    x[i] = orig;
    g[i] = (hi - lo) / (2.0 * step);
  }
  return g;
}

/// Relative error with absolute fallback near zero.
inline double grad_error(const std::vector<double>& got,
                         const std::vector<double>& want,
                         double abs_floor = 1e-8) {
  double worst = 0.0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    double denom = std::max({std::fabs(got[i]), std::fabs(want[i]), abs_floor / 1e-3});
    double err = std::fabs(got[i] - want[i]);
    if (err < abs_floor) continue;
    worst = std::max(worst, err / denom);
  }
  return worst;
}

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double variance_of(const std::vector<double>& v) {
  double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

}  // namespace foogd::testutil
