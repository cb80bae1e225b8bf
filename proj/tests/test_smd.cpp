#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "foogd/smd.hpp"
#include "testutil.hpp"

using namespace foogd;

namespace {

ModelBundle neg_identity_bundle(double sigma) {
  Tensor A({2, 2}, {-1.0, 0.0, 0.0, -1.0});
  return testutil::exact_linear_bundle(2, A, {0.0, 0.0}, sigma);
}

}  // namespace

TEST_CASE("perturb returns Z + sigma V and is reproducible") {
  Tensor Z({2, 2}, {1.0, 2.0, -0.5, 3.0});
  RngStream a(5, "perturb");
  RngStream b(5, "perturb");
  auto [Zt1, V1] = perturb(Z, 0.5, a);
  auto [Zt2, V2] = perturb(Z, 0.5, b);
  CHECK(Zt1.data() == Zt2.data());
  CHECK(V1.data() == V2.data());
  for (std::size_t i = 0; i < Z.size(); ++i)
    CHECK(Zt1[i] == doctest::Approx(Z[i] + 0.5 * V1[i]).epsilon(1e-15));
  CHECK_THROWS_AS(perturb(Z, 0.0, a), std::domain_error);
}

TEST_CASE("perturbation energy matches d sigma^2") {
  // E||Ztilde - Z||^2 per row = d * sigma^2
  std::size_t n = 100000;
  double sigma = 0.5;
  Tensor Z = Tensor::zeros({n, 2});
  RngStream stream(11, "energy");
  auto [Zt, V] = perturb(Z, sigma, stream);
  std::vector<double> per_row(n);
  for (std::size_t i = 0; i < n; ++i)
    per_row[i] = Zt.at(i, 0) * Zt.at(i, 0) + Zt.at(i, 1) * Zt.at(i, 1);
  double mean = testutil::mean_of(per_row);
  // var of sigma^2 chi2_2 is 2*d*sigma^4; 4 SE band
  double se = sigma * sigma * std::sqrt(2.0 * 2.0 / static_cast<double>(n));
  CHECK(std::fabs(mean - 2.0 * sigma * sigma) < 4.0 * se);
}

TEST_CASE("dsm loss vanishes for the oracle score on a point mass") {
  // all rows at z0: the oracle s(ztilde) = -(ztilde - z0)/sigma^2 equals
  // -v/sigma exactly
  double sigma = 0.5;
  double a = -1.0 / (sigma * sigma);
  Tensor A({2, 2}, {a, 0.0, 0.0, a});
  std::vector<double> z0 = {0.7, -0.2};
  std::vector<double> c = {-a * z0[0], -a * z0[1]};
  ModelBundle b = testutil::exact_linear_bundle(2, A, c, sigma);

  Tensor Z({4, 2});
  for (std::size_t i = 0; i < 4; ++i) {
    Z.at(i, 0) = z0[0];
    Z.at(i, 1) = z0[1];
  }
  Tape tape;
  MlpVars s = mlp_leaves(tape, b.s, false);
  RngStream stream(3, "dsm");
  double loss = dsm_loss(b.spec_s, s, Z, sigma, stream).value().item();
  CHECK(loss == doctest::Approx(0.0).epsilon(1e-18));
}

TEST_CASE("dsm loss of the zero net estimates d/(2 sigma^2)") {
  Tensor A = Tensor::zeros({2, 2});
  ModelBundle b = testutil::exact_linear_bundle(2, A, {0.0, 0.0}, 1.0);
  Tensor Z = Tensor::zeros({100000, 2});
  Tape tape;
  MlpVars s = mlp_leaves(tape, b.s, false);
  RngStream stream(7, "dsm-zero");
  double loss = dsm_loss(b.spec_s, s, Z, 1.0, stream).value().item();
  // per-sample 0.5*||v||^2 has mean 1 and variance 1 for d=2
  double se = 1.0 / std::sqrt(100000.0);
  CHECK(std::fabs(loss - 1.0) < 4.0 * se);
}

TEST_CASE("dsm loss of the zero net ignores batch order") {
  Tensor A = Tensor::zeros({2, 2});
  ModelBundle b = testutil::exact_linear_bundle(2, A, {0.0, 0.0}, 1.0);
  RngStream rng(9, "pts");
  Tensor Z = rng.gaussian({16, 2});
  Tensor Zperm({16, 2});
  for (std::size_t i = 0; i < 16; ++i) {
    Zperm.at(i, 0) = Z.at(15 - i, 0);
    Zperm.at(i, 1) = Z.at(15 - i, 1);
  }
  Tape tape;
  MlpVars s = mlp_leaves(tape, b.s, false);
  RngStream s1(1, "same"), s2(1, "same");
  double l1 = dsm_loss(b.spec_s, s, Z, 0.3, s1).value().item();
  double l2 = dsm_loss(b.spec_s, s, Zperm, 0.3, s2).value().item();
  CHECK(l1 == l2);
}

TEST_CASE("multi-sigma dsm is the unweighted mean and collapses to one") {
  RngStream init(15, "init");
  MlpSpec sf{{2, 2}, Activation::kTanh}, sg{{2, 2}, Activation::kTanh},
      ss{{3, 8, 2}, Activation::kTanh};
  ModelBundle b = init_bundle(sf, sg, ss, init);
  RngStream rng(2, "z");
  Tensor Z = rng.gaussian({6, 2});
  Tape tape;
  MlpVars s = mlp_leaves(tape, b.s, false);

  std::vector<double> sigmas = {0.1, 0.2, 0.4};
  RngStream m1(4, "multi");
  double multi = dsm_loss_multi(b.spec_s, s, Z, sigmas, m1).value().item();
  RngStream m2(4, "multi");
  double acc = 0.0;
  for (double sg_ : sigmas) acc += dsm_loss(b.spec_s, s, Z, sg_, m2).value().item();
  CHECK(multi == doctest::Approx(acc / 3.0).epsilon(1e-14));

  RngStream c1(4, "one"), c2(4, "one");
  CHECK(dsm_loss_multi(b.spec_s, s, Z, {0.25}, c1).value().item() ==
        dsm_loss(b.spec_s, s, Z, 0.25, c2).value().item());
}

TEST_CASE("dsm gradient matches finite differences") {
  RngStream init(23, "init");
  MlpSpec sf{{2, 2}, Activation::kTanh}, sg{{2, 2}, Activation::kTanh},
      ss{{3, 6, 2}, Activation::kTanh};
  ModelBundle b = init_bundle(sf, sg, ss, init);
  RngStream rng(6, "z");
  Tensor Z = rng.gaussian({5, 2});

  Tensor flat0 = flatten_params(b);
  std::size_t off = flat0.size() - b.spec_s.param_count();
  auto eval = [&](const std::vector<double>& theta) {
    Tensor flat = flat0;
    for (std::size_t i = 0; i < theta.size(); ++i) flat[off + i] = theta[i];
    ModelBundle m = unflatten_params(flat, b);
    Tape tape;
    MlpVars s = mlp_leaves(tape, m.s, false);
    RngStream stream(8, "fd");
    return dsm_loss(m.spec_s, s, Z, 0.2, stream).value().item();
  };
  Tape tape;
  MlpVars s = mlp_leaves(tape, b.s, true);
  RngStream stream(8, "fd");
  tape.backward(dsm_loss(b.spec_s, s, Z, 0.2, stream));
  std::vector<double> got;
  for (std::size_t l = 0; l < s.weights.size(); ++l) {
    Tensor gw = tape.grad(s.weights[l]);
    Tensor gb = tape.grad(s.biases[l]);
    for (double g : gw.data()) got.push_back(g);
    for (double g : gb.data()) got.push_back(g);
  }
  std::vector<double> theta(flat0.data().begin() + off, flat0.data().end());
  auto want = testutil::finite_difference(eval, theta);
  CHECK(testutil::grad_error(got, want) < 1e-5);
}

TEST_CASE("langevin with zero score is a random walk of variance 1 + T eps") {
  Tensor A = Tensor::zeros({2, 2});
  ModelBundle b = testutil::exact_linear_bundle(2, A, {0.0, 0.0}, 0.1);
  LangevinConfig cfg{100, 0.01, 0.1, false};
  RngStream stream(31, "walk");
  Tensor Zg = langevin_sample_value(b, 4096, cfg, stream);
  double var = testutil::variance_of(Zg.data());
  double se = 2.0 * std::sqrt(2.0 / (4096.0 * 2.0 - 1.0));
  CHECK(std::fabs(var - 2.0) < 4.0 * se);
}

TEST_CASE("langevin with the analytic normal score approaches N(0,I)") {
  ModelBundle b = neg_identity_bundle(1.0);
  LangevinConfig cfg{500, 0.01, 1.0, false};
  RngStream stream(33, "stationary");
  Tensor Zg = langevin_sample_value(b, 1024, cfg, stream);
  double mean = testutil::mean_of(Zg.data());
  double var = testutil::variance_of(Zg.data());
  CHECK(std::fabs(mean) < 0.15);
  CHECK(var > 0.8);
  CHECK(var < 1.2);
}

TEST_CASE("langevin degenerate cases and divergence error") {
  ModelBundle b = neg_identity_bundle(1.0);
  // T=1, eps=0: the chain returns its start point
  LangevinConfig idle{1, 0.0, 1.0, false};
  RngStream s1(40, "start");
  Tensor Zg = langevin_sample_value(b, 8, idle, s1);
  RngStream s2(40, "start");
  Tensor Z0 = s2.gaussian({8, 2});
  CHECK(Zg.data() == Z0.data());

  // a strongly expanding score field overflows and names the failing step
  Tensor K({2, 2}, {1e8, 0.0, 0.0, 1e8});
  ModelBundle big = testutil::exact_linear_bundle(2, K, {0.0, 0.0}, 1.0);
  LangevinConfig blow{200, 4.0, 1.0, false};
  RngStream s3(41, "blow");
  CHECK_THROWS_WITH_AS(langevin_sample_value(big, 4, blow, s3),
                       doctest::Contains("step"), std::runtime_error);
}

TEST_CASE("mmd closed forms and symmetry") {
  RngStream rng(3, "pts");
  Tensor X = rng.gaussian({7, 2});
  CHECK(mmd_value(X, X, 1.5) == doctest::Approx(0.0).epsilon(1e-12));

  Tensor a({1, 1}, {0.0});
  Tensor b({1, 1}, {1.0});
  CHECK(mmd_value(a, b, 1.0) ==
        doctest::Approx(2.0 * (1.0 - std::exp(-1.0))).epsilon(1e-12));

  Tensor Y = rng.gaussian({5, 2});
  CHECK(mmd_value(X, Y, 2.0) == mmd_value(Y, X, 2.0));
  CHECK(mmd_value(X, Y, 2.0) >= 0.0);
  CHECK_THROWS_AS(mmd_value(X, Y, 0.0), std::domain_error);
}

TEST_CASE("unbiased mmd matches a brute-force U-statistic") {
  RngStream rng(5, "pts");
  Tensor X = rng.gaussian({6, 2});
  Tensor Y = rng.gaussian({4, 2});
  double h = 1.3;
  auto k = [&](const Tensor& A, std::size_t i, const Tensor& B,
               std::size_t j) {
    double r2 = 0.0;
    for (std::size_t c = 0; c < 2; ++c) {
      double d = A.at(i, c) - B.at(j, c);
      r2 += d * d;
    }
    return std::exp(-r2 / h);
  };
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j)
      if (i != j) sxx += k(X, i, X, j);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 4; ++j) sxy += k(X, i, Y, j);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      if (i != j) syy += k(Y, i, Y, j);
  double want = sxx / 30.0 - 2.0 * sxy / 24.0 + syy / 12.0;
  CHECK(mmd_value(X, Y, h, true) == doctest::Approx(want).epsilon(1e-13));
}

TEST_CASE("mmd gradient w.r.t. both inputs matches finite differences") {
  RngStream rng(8, "pts");
  Tensor X = rng.gaussian({5, 2});
  Tensor Y = rng.gaussian({4, 2});
  double h = 0.9;
  for (bool unbiased : {false, true}) {
    auto evalY = [&](const std::vector<double>& y) {
      return mmd_value(X, Tensor({4, 2}, y), h, unbiased);
    };
    auto evalX = [&](const std::vector<double>& x) {
      return mmd_value(Tensor({5, 2}, x), Y, h, unbiased);
    };
    Tape tape;
    Var xv = tape.leaf(X, true);
    Var yv = tape.leaf(Y, true);
    tape.backward(mmd(xv, yv, h, unbiased));
    CHECK(testutil::grad_error(tape.grad(yv).data(),
                               testutil::finite_difference(evalY, Y.data())) <
          1e-5);
    CHECK(testutil::grad_error(tape.grad(xv).data(),
                               testutil::finite_difference(evalX, X.data())) <
          1e-5);
  }
}

TEST_CASE("median bandwidth brute force") {
  Tensor X({3, 1}, {0.0, 1.0, 3.0});
  CHECK(median_bandwidth(X) == doctest::Approx(4.0).epsilon(1e-15));

  Tensor same({4, 2});
  for (auto& v : same.data()) v = 2.5;
  CHECK(median_bandwidth(same) == 1.0);

  RngStream rng(2, "pts");
  Tensor P = rng.gaussian({9, 2});
  Tensor P3 = P;
  for (auto& v : P3.data()) v *= 3.0;
  CHECK(median_bandwidth(P3) ==
        doctest::Approx(9.0 * median_bandwidth(P)).epsilon(1e-12));
}

TEST_CASE("sm3d loss combines its parts by lambda_m") {
  RngStream init(44, "init");
  MlpSpec sf{{2, 2}, Activation::kTanh}, sg{{2, 2}, Activation::kTanh},
      ss{{3, 8, 2}, Activation::kTanh};
  ModelBundle b = init_bundle(sf, sg, ss, init);
  RngStream rng(45, "z");
  Tensor Z = rng.gaussian({6, 2});
  LangevinConfig lcfg{5, 0.05, 0.1, true};

  for (double lm : {0.0, 0.5, 1.0}) {
    Sm3dConfig cfg;
    cfg.lambda_m = lm;
    Tape tape;
    MlpVars s = mlp_leaves(tape, b.s, false);
    Sm3dParts parts;
    RngStream stream(46, "sm3d");
    double total =
        sm3d_loss(b.spec_s, s, tape, Z, cfg, lcfg, stream, &parts)
            .value()
            .item();
    CHECK(total == parts.total);
    CHECK(total == doctest::Approx((1.0 - lm) * parts.dsm + lm * parts.mmd)
                       .epsilon(1e-14));
    if (lm == 0.0) {
      // identical to a standalone dsm evaluation on the same child stream
      Tape t2;
      MlpVars s2 = mlp_leaves(t2, b.s, false);
      RngStream outer(46, "sm3d");
      RngStream dsm_stream = outer.child("dsm");
      CHECK(total ==
            dsm_loss(b.spec_s, s2, Z, cfg.sigmas[0], dsm_stream).value().item());
    }
    if (lm == 1.0) CHECK(total == parts.mmd);
  }
}

TEST_CASE("full-chain langevin gradient of the mmd term") {
  RngStream init(50, "init");
  MlpSpec sf{{2, 2}, Activation::kTanh}, sg{{2, 2}, Activation::kTanh},
      ss{{3, 6, 2}, Activation::kTanh};
  ModelBundle b = init_bundle(sf, sg, ss, init);
  RngStream rng(51, "z");
  Tensor Z = rng.gaussian({6, 2});
  Sm3dConfig cfg;
  cfg.lambda_m = 1.0;  // isolate the mmd-through-the-chain path
  // pin the bandwidth: the median choice is detached from the graph, so a
  // finite difference would see its variation while backward does not
  cfg.bandwidth = BandwidthPolicy::kFixed;
  cfg.fixed_bandwidth = 1.0;
  LangevinConfig lcfg{4, 0.05, 0.1, true};

  Tensor flat0 = flatten_params(b);
  std::size_t off = flat0.size() - b.spec_s.param_count();
  auto eval = [&](const std::vector<double>& theta) {
    Tensor flat = flat0;
    for (std::size_t i = 0; i < theta.size(); ++i) flat[off + i] = theta[i];
    ModelBundle m = unflatten_params(flat, b);
    Tape tape;
    MlpVars s = mlp_leaves(tape, m.s, false);
    RngStream stream(52, "chain");
    return sm3d_loss(m.spec_s, s, tape, Z, cfg, lcfg, stream, nullptr)
        .value()
        .item();
  };
  Tape tape;
  MlpVars s = mlp_leaves(tape, b.s, true);
  RngStream stream(52, "chain");
  tape.backward(sm3d_loss(b.spec_s, s, tape, Z, cfg, lcfg, stream, nullptr));
  std::vector<double> got;
  for (std::size_t l = 0; l < s.weights.size(); ++l) {
    Tensor gw = tape.grad(s.weights[l]);
    Tensor gb = tape.grad(s.biases[l]);
    for (double g : gw.data()) got.push_back(g);
    for (double g : gb.data()) got.push_back(g);
  }
  std::vector<double> theta(flat0.data().begin() + off, flat0.data().end());
  auto want = testutil::finite_difference(eval, theta);
  CHECK(testutil::grad_error(got, want) < 1e-4);
}

TEST_CASE("score update step touches only the score parameters") {
  RngStream init(60, "init");
  MlpSpec sf{{2, 4, 2}, Activation::kTanh}, sg{{2, 3}, Activation::kTanh},
      ss{{3, 8, 2}, Activation::kTanh};
  ModelBundle b = init_bundle(sf, sg, ss, init);
  RngStream rng(61, "x");
  Tensor X = rng.gaussian({8, 2});
  Sm3dConfig cfg;
  LangevinConfig lcfg{5, 0.05, 0.1, true};

  ModelBundle frozen = b;
  SgdConfig zero_lr{0.0, 0.9, 0.0};
  SgdState st;
  RngStream stream(62, "step");
  score_update_step(frozen, X, cfg, lcfg, zero_lr, st, stream);
  CHECK(flatten_params(frozen).data() == flatten_params(b).data());

  ModelBundle moved = b;
  SgdConfig opt{0.05, 0.9, 0.0};
  SgdState st2;
  RngStream stream2(62, "step");
  score_update_step(moved, X, cfg, lcfg, opt, st2, stream2);
  for (std::size_t l = 0; l < b.f.weights.size(); ++l) {
    CHECK(moved.f.weights[l].data() == b.f.weights[l].data());
    CHECK(moved.f.biases[l].data() == b.f.biases[l].data());
  }
  CHECK(moved.g.weights[0].data() == b.g.weights[0].data());
  CHECK(moved.s.weights[0].data() != b.s.weights[0].data());
}

TEST_CASE("score updates on a frozen objective mostly descend") {
  RngStream init(70, "init");
  MlpSpec sf{{2, 2}, Activation::kTanh}, sg{{2, 2}, Activation::kTanh},
      ss{{3, 16, 2}, Activation::kTanh};
  ModelBundle b = init_bundle(sf, sg, ss, init);
  // identity feature layer so the batch doubles as the latent batch
  b.f.weights[0] = Tensor({2, 2}, {1.0, 0.0, 0.0, 1.0});
  RngStream rng(71, "x");
  Tensor X = rng.gaussian({32, 2});
  Sm3dConfig cfg;
  cfg.sigmas = {0.5};
  LangevinConfig lcfg{5, 0.05, 0.5, true};
  SgdConfig opt{0.01, 0.0, 0.0};
  SgdState st;

  // reconstructing the same stream every step keeps the noise fixed, so the
  // objective is deterministic and plain SGD at a small step should almost
  // always descend
  int decreases = 0;
  double prev = 0.0;
  for (int step = 0; step < 51; ++step) {
    RngStream stream(72, "fixed-noise");
    Sm3dParts parts =
        score_update_step(b, X, cfg, lcfg, opt, st, stream);
    if (step > 0 && parts.total < prev) ++decreases;
    prev = parts.total;
  }
  CHECK(decreases >= 45);
}
