#include <cmath>
#include <numeric>

#include "doctest.h"
#include "shiftlab/ops.hpp"
#include "shiftlab/optim.hpp"
#include "support.hpp"

using namespace shiftlab;
using testing::random_matrix;

TEST_CASE("matmul variants match a naive triple loop") {
  Rng rng = make_rng(1);
  const Matrix a = random_matrix(7, 5, rng), b = random_matrix(5, 3, rng);
  const Matrix c = matmul(a, b);
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < 5; ++t)
        s += a(i, t) * b(t, j);
      CHECK(c(i, j) == doctest::Approx(s).epsilon(1e-13));
    }
  const Matrix tn = matmul_tn(transpose(a), b);
  const Matrix nt = matmul_nt(a, transpose(b));
  for (std::size_t i = 0; i < c.size(); ++i) {
    CHECK(tn.data()[i] == doctest::Approx(c.data()[i]).epsilon(1e-13));
    CHECK(nt.data()[i] == doctest::Approx(c.data()[i]).epsilon(1e-13));
  }
  CHECK_THROWS_AS(matmul(a, a), ShapeError);
}

TEST_CASE("argmax ties resolve to the lowest index") {
  const Matrix m{{1, 3, 3}, {2, 2, 2}};
  const auto idx = argmax_rows(m);
  CHECK(idx[0] == 1);
  CHECK(idx[1] == 0);
}

TEST_CASE("softmax rows are stable and on the simplex") {
  Rng rng = make_rng(2);
  Matrix l = random_matrix(50, 6, rng, 30.0);
  l(0, 0) = 800.0;
  const Matrix p = stable_softmax(l);
  for (std::size_t i = 0; i < p.rows(); ++i) {
    const auto row = p.row(i);
    CHECK(std::accumulate(row.begin(), row.end(), 0.0) ==
          doctest::Approx(1.0).epsilon(1e-12));
    for (double v : row)
      CHECK(v >= 0.0);
  }
  Matrix bad(1, 2);
  bad(0, 1) = std::nan("");
  CHECK_THROWS_AS(stable_softmax(bad), std::domain_error);
}

TEST_CASE("uniform divergence is bounded below by ln K") {
  Rng rng = make_rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 2 + trial % 9;
    const Matrix p = stable_softmax(random_matrix(1, k, rng, 5.0));
    CHECK(uniform_divergence(p.row(0)) >= std::log(double(k)) - 1e-10);
  }
  const Vector u(4, 0.25);
  CHECK(uniform_divergence(u) == doctest::Approx(std::log(4.0)));
}

TEST_CASE("binary cross entropy stays finite for extreme logits") {
  CHECK(std::isfinite(bce_scalar(1.0, -800.0)));
  CHECK(bce_scalar(1.0, -800.0) == doctest::Approx(800.0));
  CHECK(bce_scalar(0.0, 0.0) == doctest::Approx(std::log(2.0)));
  CHECK(sigmoid(0.0) == 0.5);
}

TEST_CASE("softmax cross entropy and entropy gradients match finite differences") {
  Rng rng = make_rng(4);
  Matrix l = random_matrix(6, 5, rng, 2.0);
  const auto y = testing::random_labels(6, 5, rng);
  const auto ce = softmax_cross_entropy(l, y);
  const auto ent = softmax_entropy(l);
  const double h = 1e-5;
  for (std::size_t i = 0; i < l.size(); ++i) {
    const double keep = l.data()[i];
    l.data()[i] = keep + h;
    const double cu = softmax_cross_entropy(l, y).loss, eu = softmax_entropy(l).loss;
    l.data()[i] = keep - h;
    const double cd = softmax_cross_entropy(l, y).loss, ed = softmax_entropy(l).loss;
    l.data()[i] = keep;
    CHECK(testing::rel_err(ce.grad.data()[i], (cu - cd) / (2 * h)) < 1e-5);
    CHECK(testing::rel_err(ent.grad.data()[i], (eu - ed) / (2 * h)) < 1e-5);
  }
}

TEST_CASE("network gradients match finite differences in every BN mode") {
  Rng rng = make_rng(5);
  for (BnMode mode : {BnMode::train, BnMode::replace, BnMode::eval}) {
    MlpClassifier clf(3, {6, 5}, 4, 9);
    // Non-trivial running statistics for eval mode.
    clf.forward(random_matrix(32, 3, rng), BnMode::train);
    const Matrix x = random_matrix(12, 3, rng);
    const auto y = testing::random_labels(12, 4, rng);
    // Train mode updates running stats on every call; work on a copy each
    // evaluation so the loss surface stays fixed.
    auto loss = [&] {
      MlpClassifier c = clf;
      return softmax_cross_entropy(c.forward(x, mode), y).loss;
    };
    MlpClassifier work = clf;
    work.zero_grad();
    const auto ce = softmax_cross_entropy(work.forward(x, mode), y);
    work.backward(ce.grad);
    const auto analytic = testing::grads_of(work.params());
    CHECK(testing::max_fd_error(clf.params(), analytic, loss) < 1e-5);
  }
}

TEST_CASE("BN forward without a mode is rejected") {
  BatchNorm bn(3);
  CHECK_THROWS_AS(bn.forward(Matrix(4, 3)), std::logic_error);
  CHECK_THROWS(bn.infer(Matrix(4, 3), BnMode::train));
}

TEST_CASE("BN replace mode leaves running statistics alone") {
  Rng rng = make_rng(6);
  BatchNorm bn(4);
  bn.set_mode(BnMode::replace);
  const Vector mean = bn.running_mean, var = bn.running_var;
  bn.forward(random_matrix(10, 4, rng, 3.0));
  CHECK(bn.running_mean == mean);
  CHECK(bn.running_var == var);
  bn.set_mode(BnMode::train);
  bn.forward(random_matrix(10, 4, rng, 3.0));
  CHECK(bn.running_mean != mean);
}

TEST_CASE("Adam and SGD minimize a quadratic") {
  for (OptimizerKind kind : {OptimizerKind::adam, OptimizerKind::sgd_momentum}) {
    Vector x{3.0, -2.0}, g(2);
    std::vector<Param> ps{{"x", x, g, false}};
    OptimizerConfig oc;
    oc.kind = kind;
    oc.learning_rate = kind == OptimizerKind::adam ? 0.05 : 0.02;
    Optimizer opt(oc);
    for (int i = 0; i < 2000; ++i) {
      g[0] = 2 * x[0];
      g[1] = 2 * x[1];
      opt.step(ps);
    }
    CHECK(std::abs(x[0]) < 1e-3);
    CHECK(std::abs(x[1]) < 1e-3);
  }
}

TEST_CASE("cosine schedule hits its endpoints") {
  OptimizerConfig oc;
  oc.learning_rate = 0.1;
  oc.cosine = true;
  oc.total_steps = 10;
  Optimizer opt(oc);
  CHECK(opt.current_lr() == doctest::Approx(0.1));
  Vector x{1.0}, g{0.0};
  std::vector<Param> ps{{"x", x, g, false}};
  for (int i = 0; i < 5; ++i)
    opt.step(ps);
  CHECK(opt.current_lr() == doctest::Approx(0.05));
  for (int i = 0; i < 10; ++i)
    opt.step(ps);
  CHECK(opt.current_lr() == doctest::Approx(0.0));
}

TEST_CASE("non-finite gradients are rejected before any update") {
  Vector x{1.0, 2.0}, g{0.5, std::numeric_limits<double>::infinity()};
  std::vector<Param> ps{{"x", x, g, false}};
  Optimizer opt(OptimizerConfig{});
  CHECK_THROWS_AS(opt.step(ps), std::domain_error);
  CHECK(x[0] == 1.0);
  CHECK(x[1] == 2.0);
}

TEST_CASE("classifier JSON round trip is exact") {
  const MlpClassifier clf = testing::toy_classifier(0.5, 3, 2);
  const MlpClassifier back = MlpClassifier::from_json(clf.to_json());
  CHECK(back.full_snapshot() == clf.full_snapshot());
}

TEST_CASE("softmax cross entropy stays exact when the label is saturated away") {
  Matrix l(1, 3);
  l(0, 1) = 60.0;
  const std::vector<int> y{0};
  const auto ce = softmax_cross_entropy(l, y);
  CHECK(ce.loss == doctest::Approx(60.0 + std::log1p(2.0 * std::exp(-60.0))));
  l(0, 1) = 60.0 + 1e-5;
  const double up = softmax_cross_entropy(l, y).loss;
  CHECK(std::abs((up - ce.loss) / 1e-5 - ce.grad(0, 1)) < 1e-6);
}
