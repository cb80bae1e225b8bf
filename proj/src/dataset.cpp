#include <cmath>
#include <stdexcept>

#include "foogd/workbench.hpp"

namespace foogd {

void DatasetParams::validate() const {
  if (modes < 1) throw std::invalid_argument("dataset: modes < 1");
  if (per_mode < 1) throw std::invalid_argument("dataset: per_mode < 1");
  if (radius <= 0.0) throw std::invalid_argument("dataset: radius <= 0");
  if (mode_std <= 0.0) throw std::invalid_argument("dataset: mode_std <= 0");
  if (out_samples < 1) throw std::invalid_argument("dataset: out_samples < 1");
  if (shift_severity < 1 || shift_severity > 5)
    throw std::invalid_argument("dataset: severity outside 1..5");
}

namespace {

struct Mode {
  double x, y;
};

std::vector<Mode> ring_modes(std::size_t m, double radius) {
  std::vector<Mode> modes(m);
  for (std::size_t i = 0; i < m; ++i) {
    double a = 2.0 * M_PI * static_cast<double>(i) / static_cast<double>(m);
    modes[i] = {radius * std::cos(a), radius * std::sin(a)};
  }
  return modes;
}

std::vector<Mode> grid_modes(std::size_t side, double radius) {
  std::vector<Mode> modes;
  double step = side > 1 ? 2.0 * radius / static_cast<double>(side - 1) : 0.0;
  for (std::size_t i = 0; i < side; ++i)
    for (std::size_t j = 0; j < side; ++j)
      modes.push_back({-radius + step * static_cast<double>(i),
                       -radius + step * static_cast<double>(j)});
  return modes;
}

void sample_modes(const std::vector<Mode>& modes, std::size_t per_mode,
                  double sd, std::size_t classes, RngStream& rng, Tensor& X,
                  std::vector<std::size_t>& y) {
  std::size_t n = modes.size() * per_mode;
  X = Tensor({n, 2});
  y.resize(n);
  std::size_t at = 0;
  for (std::size_t m = 0; m < modes.size(); ++m)
    for (std::size_t i = 0; i < per_mode; ++i, ++at) {
      X.at(at, 0) = modes[m].x + sd * rng.next_gaussian();
      X.at(at, 1) = modes[m].y + sd * rng.next_gaussian();
      y[at] = m % classes;
    }
}

void sample_two_moons(std::size_t per_moon, double noise, RngStream& rng,
                      Tensor& X, std::vector<std::size_t>& y) {
  std::size_t n = 2 * per_moon;
  X = Tensor({n, 2});
  y.resize(n);
  for (std::size_t i = 0; i < per_moon; ++i) {
    double a = M_PI * rng.next_uniform();
    X.at(i, 0) = std::cos(a) + noise * rng.next_gaussian();
    X.at(i, 1) = std::sin(a) + noise * rng.next_gaussian();
    y[i] = 0;
    double b = M_PI * rng.next_uniform();
    X.at(per_moon + i, 0) = 1.0 - std::cos(b) + noise * rng.next_gaussian();
    X.at(per_moon + i, 1) = 0.5 - std::sin(b) + noise * rng.next_gaussian();
    y[per_moon + i] = 1;
  }
}

}  // namespace

Tensor covariate_shift(const Tensor& X, ShiftKind kind, int severity,
                       RngStream& stream) {
  // rotation accepts a signed severity so the shift can be undone exactly
  if (severity == 0 || severity < -5 || severity > 5 ||
      (severity < 0 && kind != ShiftKind::kRotate))
    throw std::invalid_argument("covariate_shift: severity outside 1..5");
  Tensor out = X;
  switch (kind) {
    case ShiftKind::kRotate: {
      if (X.cols() % 2 != 0)
        throw std::invalid_argument("covariate_shift: rotate needs even dim");
      double a = 5.0 * severity * M_PI / 180.0;
      double ca = std::cos(a), sa = std::sin(a);
      for (std::size_t i = 0; i < X.rows(); ++i)
        for (std::size_t p = 0; p + 1 < X.cols(); p += 2) {
          double x = out.at(i, p), y = out.at(i, p + 1);
          out.at(i, p) = ca * x - sa * y;
          out.at(i, p + 1) = sa * x + ca * y;
        }
      break;
    }
    case ShiftKind::kJitter: {
      // per-column std of the data
      std::vector<double> sd(X.cols(), 0.0);
      for (std::size_t c = 0; c < X.cols(); ++c) {
        double mean = 0.0;
        for (std::size_t i = 0; i < X.rows(); ++i) mean += X.at(i, c);
        mean /= static_cast<double>(X.rows());
        double var = 0.0;
        for (std::size_t i = 0; i < X.rows(); ++i)
          var += (X.at(i, c) - mean) * (X.at(i, c) - mean);
        sd[c] = std::sqrt(var / static_cast<double>(X.rows()));
      }
      for (std::size_t i = 0; i < X.rows(); ++i)
        for (std::size_t c = 0; c < X.cols(); ++c)
          out.at(i, c) += 0.05 * severity * sd[c] * stream.next_gaussian();
      break;
    }
    case ShiftKind::kScale: {
      double f = 1.0 + 0.05 * severity;
      for (auto& v : out.data()) v *= f;
      break;
    }
  }
  return out;
}

DatasetBundle generate_dataset(const DatasetParams& params, RngStream& stream) {
  params.validate();
  DatasetBundle b;
  b.input_dim = 2;
  b.shift = params.shift;
  b.shift_severity = params.shift_severity;

  std::vector<Mode> modes;
  std::size_t classes = params.classes;
  RngStream train_rng = stream.child("train");
  RngStream test_rng = stream.child("test");
  RngStream out_rng = stream.child("out");
  RngStream shift_rng = stream.child("shift");

  switch (params.kind) {
    case DatasetKind::kGaussianRing:
      modes = ring_modes(params.modes, params.radius);
      if (classes == 0) classes = params.modes;
      sample_modes(modes, params.per_mode, params.mode_std, classes, train_rng,
                   b.train_X, b.train_y);
      sample_modes(modes, params.test_per_mode, params.mode_std, classes,
                   test_rng, b.test_X, b.test_y);
      break;
    case DatasetKind::kGridMixture:
      modes = grid_modes(params.modes, params.radius);
      if (classes == 0) classes = modes.size();
      sample_modes(modes, params.per_mode, params.mode_std, classes, train_rng,
                   b.train_X, b.train_y);
      sample_modes(modes, params.test_per_mode, params.mode_std, classes,
                   test_rng, b.test_X, b.test_y);
      break;
    case DatasetKind::kTwoMoons:
      classes = 2;
      sample_two_moons(params.per_mode, params.mode_std, train_rng, b.train_X,
                       b.train_y);
      sample_two_moons(params.test_per_mode, params.mode_std, test_rng,
                       b.test_X, b.test_y);
      break;
  }
  b.classes = classes;

  // OUT: modes at 3x the radius (well-separated semantic shift)
  {
    std::size_t m = std::max<std::size_t>(params.modes, 4);
    std::vector<Mode> out_modes = ring_modes(m, 3.0 * params.radius);
    std::size_t per = (params.out_samples + m - 1) / m;
    Tensor all;
    std::vector<std::size_t> dummy;
    sample_modes(out_modes, per, params.mode_std, m, out_rng, all, dummy);
    b.out_X = Tensor({params.out_samples, 2});
    for (std::size_t i = 0; i < params.out_samples; ++i) {
      b.out_X.at(i, 0) = all.at(i, 0);
      b.out_X.at(i, 1) = all.at(i, 1);
    }
  }

  if (!modes.empty()) {
    b.mode_means = Tensor({modes.size(), 2});
    for (std::size_t m = 0; m < modes.size(); ++m) {
      b.mode_means.at(m, 0) = modes[m].x;
      b.mode_means.at(m, 1) = modes[m].y;
    }
  }

  b.inc_X = covariate_shift(b.test_X, params.shift, params.shift_severity,
                            shift_rng);
  b.inc_y = b.test_y;
  return b;
}

}  // namespace foogd
