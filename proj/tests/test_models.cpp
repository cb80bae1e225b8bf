#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "foogd/models.hpp"
#include "testutil.hpp"

using namespace foogd;

namespace {

MlpSpec small_f() { return MlpSpec{{2, 4, 2}, Activation::kTanh}; }
MlpSpec small_g() { return MlpSpec{{2, 3}, Activation::kTanh}; }
MlpSpec small_s() { return MlpSpec{{3, 8, 2}, Activation::kTanh}; }

}  // namespace

TEST_CASE("init_bundle is deterministic given the stream") {
  RngStream a(7, "init");
  RngStream b(7, "init");
  ModelBundle x = init_bundle(small_f(), small_g(), small_s(), a);
  ModelBundle y = init_bundle(small_f(), small_g(), small_s(), b);
  CHECK(flatten_params(x).data() == flatten_params(y).data());
}

TEST_CASE("score network without a hidden layer is rejected") {
  MlpSpec bad_s{{3, 2}, Activation::kTanh};
  RngStream stream(0, "init");
  CHECK_THROWS_AS(init_bundle(small_f(), small_g(), bad_s, stream),
                  std::invalid_argument);
}

TEST_CASE("inconsistent dims are rejected") {
  MlpSpec wrong_g{{3, 3}, Activation::kTanh};  // head input != latent dim
  RngStream stream(0, "init");
  CHECK_THROWS_AS(init_bundle(small_f(), wrong_g, small_s(), stream),
                  std::invalid_argument);
}

TEST_CASE("He init: 64->64 weight variance near 2/64") {
  MlpSpec spec{{64, 64}, Activation::kRelu};
  RngStream stream(3, "he");
  MlpParams p = init_mlp(spec, stream);
  double var = testutil::variance_of(p.weights[0].data());
  CHECK(var == doctest::Approx(2.0 / 64.0).epsilon(0.2));
  for (double b : p.biases[0].data()) CHECK(b == 0.0);
}

TEST_CASE("forward_features on an empty batch") {
  RngStream stream(1, "init");
  ModelBundle b = init_bundle(small_f(), small_g(), small_s(), stream);
  Tensor empty({0, 2});
  Tensor z = forward_features_value(b, empty);
  CHECK(z.rows() == 0);
  CHECK(z.shape() == std::vector<std::size_t>{0, 2});
}

TEST_CASE("hand-set identity feature extractor returns its input") {
  Tensor A = Tensor::zeros({2, 2});
  ModelBundle b = testutil::exact_linear_bundle(2, A, {0.0, 0.0}, 1.0);
  RngStream rng(5, "x");
  Tensor X = rng.gaussian({6, 2});
  Tensor Z = forward_features_value(b, X);
  for (std::size_t i = 0; i < X.size(); ++i) CHECK(Z[i] == X[i]);
}

TEST_CASE("feature gradient w.r.t. X matches finite differences") {
  RngStream stream(11, "init");
  ModelBundle b = init_bundle(small_f(), small_g(), small_s(), stream);
  RngStream rng(2, "x");
  Tensor X = rng.gaussian({3, 2});

  auto eval = [&](const std::vector<double>& x) {
    Tape tape;
    MlpVars f = mlp_leaves(tape, b.f, false);
    Tensor Xt({3, 2}, x);
    return sum(square(forward_features(b.spec_f, f, tape.constant(Xt))))
        .value()
        .item();
  };
  Tape tape;
  MlpVars f = mlp_leaves(tape, b.f, false);
  Var xv = tape.leaf(X, true);
  Var loss = sum(square(forward_features(b.spec_f, f, xv)));
  tape.backward(loss);
  auto want = testutil::finite_difference(eval, X.data());
  CHECK(testutil::grad_error(tape.grad(xv).data(), want) < 1e-5);
}

TEST_CASE("cross entropy reference values") {
  Tape tape;
  Var two = tape.constant(Tensor({1, 2}, {0.0, 0.0}));
  CHECK(cross_entropy(two, {0}).value().item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  Var five = tape.constant(Tensor({1, 5}, {1.0, 1.0, 1.0, 1.0, 1.0}));
  CHECK(cross_entropy(five, {3}).value().item() ==
        doctest::Approx(std::log(5.0)).epsilon(1e-12));
  Var huge = tape.constant(Tensor({1, 3}, {500.0, 0.0, 0.0}));
  CHECK(cross_entropy(huge, {0}).value().item() ==
        doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("cross entropy gradient equals softmax minus onehot") {
  RngStream rng(9, "logits");
  Tensor L = rng.gaussian({4, 3});
  std::vector<std::size_t> labels = {0, 2, 1, 2};
  Tape tape;
  Var lv = tape.leaf(L, true);
  tape.backward(cross_entropy(lv, labels));
  Tensor got = tape.grad(lv);
  Tensor p = softmax_rows_value(L);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double want = (p.at(i, j) - (labels[i] == j ? 1.0 : 0.0)) / 4.0;
      CHECK(got.at(i, j) == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("forward_score shape, zero net, and sigma scaling") {
  RngStream stream(13, "init");
  ModelBundle b = init_bundle(small_f(), small_g(), small_s(), stream);
  RngStream rng(4, "z");
  Tensor Z = rng.gaussian({5, 2});
  CHECK(forward_score_value(b, Z, 0.1).shape() ==
        std::vector<std::size_t>{5, 2});

  ModelBundle zero = b;
  for (auto& w : zero.s.weights)
    for (auto& v : w.data()) v = 0.0;
  Tensor z1 = forward_score_value(zero, Z, 0.1);
  Tensor z2 = forward_score_value(zero, Z, 2.0);
  for (double v : z1.data()) CHECK(v == 0.0);
  for (double v : z2.data()) CHECK(v == 0.0);

  // make the raw output independent of the log-sigma input column
  ModelBundle frozen = b;
  for (std::size_t c = 0; c < frozen.s.weights[0].cols(); ++c)
    frozen.s.weights[0].at(2, c) = 0.0;
  Tensor s1 = forward_score_value(frozen, Z, 0.3);
  Tensor s2 = forward_score_value(frozen, Z, 0.6);
  for (std::size_t i = 0; i < s1.size(); ++i)
    CHECK(s2[i] == doctest::Approx(0.5 * s1[i]).epsilon(1e-12));

  CHECK_THROWS_AS(forward_score_value(b, Z, 0.0), std::domain_error);
  CHECK_THROWS_AS(forward_score_value(b, Z, -1.0), std::domain_error);
}

TEST_CASE("flatten/unflatten round trip and parameter count") {
  RngStream stream(17, "init");
  ModelBundle b = init_bundle(small_f(), small_g(), small_s(), stream);
  std::size_t want = (2 * 4 + 4) + (4 * 2 + 2)   // f
                     + (2 * 3 + 3)               // g
                     + (3 * 8 + 8) + (8 * 2 + 2);  // s
  CHECK(b.param_count() == want);
  Tensor flat = flatten_params(b);
  CHECK(flat.size() == want);
  ModelBundle back = unflatten_params(flat, b);
  CHECK(flatten_params(back).data() == flat.data());

  Tensor wrong({want + 1});
  CHECK_THROWS_AS(unflatten_params(wrong, b), std::invalid_argument);
}

TEST_CASE("exact linear score bundle realizes A z + c") {
  Tensor A({2, 2}, {0.5, -1.0, 2.0, 0.25});
  ModelBundle b = testutil::exact_linear_bundle(2, A, {0.3, -0.7}, 0.4);
  RngStream rng(21, "z");
  Tensor Z = rng.gaussian({8, 2});
  Tensor S = forward_score_value(b, Z, 0.4);
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t cc = 0; cc < 2; ++cc) {
      double want = A.at(0, cc) * Z.at(i, 0) + A.at(1, cc) * Z.at(i, 1) +
                    (cc == 0 ? 0.3 : -0.7);
      CHECK(S.at(i, cc) == doctest::Approx(want).epsilon(1e-12));
    }
}
