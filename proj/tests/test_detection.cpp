#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "foogd/detection.hpp"
#include "testutil.hpp"

using namespace foogd;

namespace {

double brute_auroc(const std::vector<double>& in,
                   const std::vector<double>& out) {
  double wins = 0.0;
  for (double o : out)
    for (double i : in) {
      if (o > i) wins += 1.0;
      else if (o == i) wins += 0.5;
    }
  return wins / (static_cast<double>(in.size()) * out.size());
}

double brute_fpr95(const std::vector<double>& in,
                   const std::vector<double>& out) {
  std::vector<double> s = in;
  std::sort(s.begin(), s.end());
  std::size_t rank =
      static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(s.size())));
  double t = s[std::max<std::size_t>(rank, 1) - 1];
  std::size_t acc = 0;
  for (double o : out)
    if (o <= t) ++acc;
  return static_cast<double>(acc) / static_cast<double>(out.size());
}

}  // namespace

TEST_CASE("score norms of hand-set models") {
  Tensor zero = Tensor::zeros({2, 2});
  ModelBundle zb = testutil::exact_linear_bundle(2, zero, {0.0, 0.0}, 1.0);
  RngStream rng(3, "x");
  Tensor X = rng.gaussian({6, 2});
  for (double n : score_norm(zb, X, 1.0)) CHECK(n == 0.0);

  Tensor I({2, 2}, {1.0, 0.0, 0.0, 1.0});
  ModelBundle ib = testutil::exact_linear_bundle(2, I, {0.0, 0.0}, 1.0);
  Tensor P({1, 2}, {3.0, 4.0});
  CHECK(score_norm(ib, P, 1.0)[0] == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(score_norm_latent(ib, P, 1.0)[0] ==
        doctest::Approx(5.0).epsilon(1e-12));
}

TEST_CASE("score norms are permutation equivariant") {
  Tensor I({2, 2}, {1.0, 0.0, 0.0, 1.0});
  ModelBundle b = testutil::exact_linear_bundle(2, I, {0.0, 0.0}, 1.0);
  RngStream rng(5, "x");
  Tensor X = rng.gaussian({7, 2});
  Tensor Xr({7, 2});
  for (std::size_t i = 0; i < 7; ++i) {
    Xr.at(i, 0) = X.at(6 - i, 0);
    Xr.at(i, 1) = X.at(6 - i, 1);
  }
  auto a = score_norm(b, X, 1.0);
  auto c = score_norm(b, Xr, 1.0);
  std::sort(a.begin(), a.end());
  std::sort(c.begin(), c.end());
  CHECK(a == c);
}

TEST_CASE("tau calibration order statistic") {
  std::vector<double> norms;
  for (int i = 1; i <= 20; ++i) norms.push_back(i);
  CHECK(calibrate_tau(norms) == -19.0);
  CHECK(calibrate_tau({5.0}) == -5.0);
  CHECK(calibrate_tau({2.5, 2.5, 2.5}) == -2.5);
  CHECK_THROWS_AS(calibrate_tau({}), std::invalid_argument);
  // returned threshold is always one of the inputs
  RngStream rng(7, "t");
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<double> v(1 + rng.next_below(40));
    for (auto& x : v) x = rng.next_gaussian();
    double t = -calibrate_tau(v);
    CHECK(std::find(v.begin(), v.end(), t) != v.end());
  }
}

TEST_CASE("is_out boundary rules") {
  CHECK(is_out(20.0, -19.0));
  CHECK_FALSE(is_out(19.0, -19.0));
  CHECK_FALSE(is_out(0.0, -0.5));
  CHECK_THROWS_AS(is_out(1.0, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(is_out(1.0, 2.0), std::invalid_argument);
}

TEST_CASE("auroc reference cases") {
  CHECK(auroc({1.0, 2.0}, {3.0, 4.0}) == 1.0);
  CHECK(auroc({2.0, 2.0}, {2.0, 2.0}) == 0.5);
  CHECK(auroc({1.0, 3.0}, {2.0, 4.0}) == 0.75);
  CHECK_THROWS_AS(auroc({}, {1.0}), std::invalid_argument);
}

TEST_CASE("fpr95 reference cases") {
  std::vector<double> in, out;
  for (int i = 1; i <= 100; ++i) in.push_back(i);
  for (int i = 50; i <= 149; ++i) out.push_back(i);
  CHECK(fpr95(in, out) == doctest::Approx(0.46).epsilon(1e-15));

  std::vector<double> high;
  for (int i = 0; i < 30; ++i) high.push_back(200.0 + i);
  CHECK(fpr95(in, high) == 0.0);

  std::vector<double> shifted = out;
  for (auto& v : shifted) v += 10.0;
  CHECK(fpr95(in, shifted) <= fpr95(in, out));
}

TEST_CASE("auroc and fpr95 match brute force on random instances") {
  RngStream rng(11, "cases");
  for (int rep = 0; rep < 60; ++rep) {
    std::size_t n = 1 + rng.next_below(60);
    std::size_t m = 1 + rng.next_below(60);
    std::vector<double> in(n), out(m);
    // quantized values so ties actually occur
    for (auto& v : in)
      v = static_cast<double>(rng.next_below(12)) * 0.5;
    for (auto& v : out)
      v = 1.0 + static_cast<double>(rng.next_below(12)) * 0.5;
    CHECK(auroc(in, out) == brute_auroc(in, out));
    CHECK(fpr95(in, out) == brute_fpr95(in, out));
  }
}

TEST_CASE("auroc is invariant under strictly increasing transforms") {
  RngStream rng(13, "inv");
  std::vector<double> in(40), out(40);
  for (auto& v : in) v = rng.next_gaussian();
  for (auto& v : out) v = 0.5 + rng.next_gaussian();
  double base = auroc(in, out);
  auto f = [](double x) { return std::exp(0.7 * x) + 3.0; };
  std::vector<double> fin = in, fout = out;
  for (auto& v : fin) v = f(v);
  for (auto& v : fout) v = f(v);
  CHECK(auroc(fin, fout) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("msp reference values") {
  Tensor l1({1, 3}, {0.0, 0.0, 0.0});
  CHECK(msp(l1)[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  Tensor l2({1, 3}, {10.0, 0.0, 0.0});
  CHECK(msp(l2)[0] ==
        doctest::Approx(1.0 / (1.0 + 2.0 * std::exp(-10.0))).epsilon(1e-12));
  Tensor l3({1, 3}, {10.0 + 7.0, 0.0 + 7.0, 0.0 + 7.0});
  CHECK(msp(l3)[0] == doctest::Approx(msp(l2)[0]).epsilon(1e-12));
}

TEST_CASE("build_report is internally consistent") {
  Tensor I({2, 2}, {1.0, 0.0, 0.0, 1.0});
  ModelBundle b = testutil::exact_linear_bundle(2, I, {0.0, 0.0}, 1.0);
  RngStream rng(17, "sets");
  Tensor in_set = rng.gaussian({50, 2});
  Tensor out_set = rng.gaussian({50, 2});
  for (auto& v : out_set.data()) v = 4.0 + 0.3 * v;

  DetectionReport same = build_report(b, in_set, in_set, in_set, 1.0);
  CHECK(same.auroc == 0.5);

  DetectionReport r = build_report(b, in_set, in_set, out_set, 1.0);
  CHECK(r.tau < 0.0);
  CHECK(r.tau == calibrate_tau(r.in_norms));
  CHECK(r.auroc == brute_auroc(r.in_norms, r.out_norms));
  CHECK(r.fpr95 == brute_fpr95(r.in_norms, r.out_norms));
  CHECK(r.auroc > 0.95);  // well separated by construction
  for (double n : r.in_norms) CHECK(n >= 0.0);
  for (double n : r.out_norms) CHECK(n >= 0.0);
}
