#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "shiftlab/ops.hpp"
#include "shiftlab/refiner.hpp"
#include "support.hpp"

using namespace shiftlab;
using testing::random_matrix;

namespace {

double frob_from_identity(const AffineRefinement &r) {
  double s = 0.0;
  for (std::size_t i = 0; i < r.classes(); ++i)
    for (std::size_t j = 0; j < r.classes(); ++j) {
      const double e = r.W(i, j) - (i == j ? 1.0 : 0.0);
      s += e * e;
    }
  return std::sqrt(s);
}

std::filesystem::path temp_file(const std::string &name) {
  return std::filesystem::temp_directory_path() / ("shiftlab_test_" + name);
}

LabeledDataset toy_intermediate(std::uint64_t seed, std::size_t n = 2000) {
  return sample_mixture(toy_spec(1.0, 2.0, 0.5, 0.25, {0, 0}), n, seed);
}

IntermediateConfig small_config() {
  IntermediateConfig c;
  c.epochs = 3;
  c.batch_size = 64;
  c.delta = 1.0;
  c.n_chunks = 20;
  c.hidden = 16;
  return c;
}

} // namespace

TEST_CASE("signature of zero logits is uniform with d = ln K") {
  const auto s = signature_from_logits(Matrix(5, 4));
  for (double v : s.p_bar)
    CHECK(v == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(s.d == doctest::Approx(std::log(4.0)).epsilon(1e-14));
}

TEST_CASE("signature of confident rows concentrates on their class") {
  Matrix l(8, 4);
  for (std::size_t i = 0; i < 8; ++i)
    l(i, 2) = 20.0;
  const auto s = signature_from_logits(l);
  CHECK(s.p_bar[2] > 0.9999);
  CHECK(s.d > 10.0);
}

TEST_CASE("signature invariants hold on random logits") {
  Rng rng = make_rng(3);
  for (int t = 0; t < 50; ++t) {
    const auto s = signature_from_logits(random_matrix(10, 6, rng, 3.0));
    double sum = 0.0;
    for (double v : s.p_bar)
      sum += v;
    CHECK(std::abs(sum - 1.0) < 1e-10);
    CHECK(s.d >= std::log(6.0) - 1e-10);
  }
}

TEST_CASE("identity refinement leaves logits unchanged") {
  Rng rng = make_rng(4);
  const Matrix l = random_matrix(9, 5, rng);
  const auto id = AffineRefinement::identity(5);
  CHECK(id.is_identity());
  CHECK(apply_refinement(l, id, false) == l);
  CHECK(apply_refinement(l, id, true) == l);
}

TEST_CASE("positive scaling keeps every argmax") {
  Rng rng = make_rng(5);
  const Matrix l = random_matrix(20, 5, rng);
  auto r = AffineRefinement::identity(5);
  for (std::size_t i = 0; i < 5; ++i)
    r.W(i, i) = 2.0;
  CHECK(argmax_rows(apply_refinement(l, r, false)) == argmax_rows(l));
}

TEST_CASE("norm preservation keeps row norms and skips zero rows") {
  Rng rng = make_rng(6);
  const Matrix l = random_matrix(15, 4, rng);
  AffineRefinement r{random_matrix(4, 4, rng), Vector(4)};
  for (double &v : r.b)
    v = 0.3;
  const Matrix out = apply_refinement(l, r, true);
  for (std::size_t i = 0; i < 15; ++i) {
    double a = 0, b = 0;
    for (std::size_t k = 0; k < 4; ++k) {
      a += l(i, k) * l(i, k);
      b += out(i, k) * out(i, k);
    }
    CHECK(std::abs(std::sqrt(a) - std::sqrt(b)) < 1e-10);
  }
  AffineRefinement zero{Matrix(4, 4), Vector(4)};
  const Matrix z = apply_refinement(l, zero, true);
  for (double v : z.data())
    CHECK(v == 0.0);
}

TEST_CASE("refinement backward matches finite differences") {
  Rng rng = make_rng(7);
  for (bool preserve : {false, true}) {
    Matrix l = random_matrix(6, 4, rng);
    AffineRefinement r{random_matrix(4, 4, rng), Vector{0.1, -0.2, 0.3, 0.0}};
    const Matrix g = random_matrix(6, 4, rng);
    auto loss = [&] {
      const Matrix out = apply_refinement(l, r, preserve);
      double s = 0.0;
      for (std::size_t i = 0; i < out.size(); ++i)
        s += out.data()[i] * g.data()[i];
      return s;
    };
    const Matrix an = apply_refinement_backward(l, r, preserve, g);
    const double h = 1e-6;
    for (std::size_t i = 0; i < l.size(); ++i) {
      const double keep = l.data()[i];
      l.data()[i] = keep + h;
      const double up = loss();
      l.data()[i] = keep - h;
      const double down = loss();
      l.data()[i] = keep;
      CHECK(testing::rel_err(an.data()[i], (up - down) / (2 * h)) < 1e-6);
    }
  }
}

TEST_CASE("fresh refiners start at the identity and refuse to refine") {
  RefinerUnified u(4, 8, 1);
  const BatchSignature sig{Vector(4, 0.25), std::log(4.0) + 0.3};
  CHECK(u.evaluate(sig).is_identity());
  CHECK_THROWS_AS(u.refine(sig), UntrainedRefinerError);
  RefinerSplit s(4, 8, false, 1);
  CHECK_THROWS_AS(s.refine(sig), UntrainedRefinerError);
}

TEST_CASE("unified refiner with all-zero parameters outputs zeros") {
  RefinerUnified u(3, 8, 1);
  for (const Param &p : u.net().params())
    std::fill(p.value.begin(), p.value.end(), 0.0);
  const auto r = u.evaluate({Vector(3, 1.0 / 3), std::log(3.0)});
  for (double v : r.W.data())
    CHECK(v == 0.0);
  for (double v : r.b)
    CHECK(v == 0.0);
}

TEST_CASE("split gate is closed at exactly s = 0.5") {
  RefinerSplit s(4, 8, false, 2);
  s.mark_trained();
  std::fill(s.detector().weight.data().begin(), s.detector().weight.data().end(), 0.0);
  std::fill(s.detector().bias.begin(), s.detector().bias.end(), 0.0);
  for (const Param &p : s.generator().params())
    for (double &v : p.value)
      v += 0.5;
  const BatchSignature sig{Vector{0.7, 0.1, 0.1, 0.1}, 3.0};
  CHECK(s.severity(sig.d) == 0.5);
  CHECK(s.refine(sig).is_identity());
  s.detector().bias[0] = 1e-9;
  CHECK(!s.refine(sig).is_identity());
}

TEST_CASE("diagonal split generator emits diagonal W and zero b") {
  RefinerSplit s(4, 8, true, 3);
  for (const Param &p : s.generator().params())
    for (double &v : p.value)
      v += 0.25;
  const auto r = s.generate(Vector{0.4, 0.3, 0.2, 0.1});
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(r.b[i] == 0.0);
    for (std::size_t j = 0; j < 4; ++j)
      if (i != j)
        CHECK(r.W(i, j) == 0.0);
  }
}

TEST_CASE("unified and split gradients match finite differences") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Rng rng = make_rng(seed, 40);
    const Matrix li = random_matrix(16, 4, rng, 2.0), lb = random_matrix(16, 4, rng, 2.0);
    const auto y = testing::random_labels(16, 4, rng);
    RefinerUnified u(4, 12, seed);
    testing::perturb(u.net().params(), rng, 0.2);
    CHECK(testing::unified_grad_error(u, li, y, lb, 0.1) < 1e-4);
    for (bool diag : {false, true}) {
      RefinerSplit s(4, 12, diag, seed);
      testing::perturb(testing::split_params(s), rng, 0.2);
      CHECK(testing::split_grad_error(s, li, y, lb) < 1e-4);
    }
  }
}

TEST_CASE("unified loss decomposes into l_imb + alpha l_bal") {
  Rng rng = make_rng(9);
  RefinerUnified u(4, 12, 9);
  testing::perturb(u.net().params(), rng, 0.2);
  const Matrix li = random_matrix(16, 4, rng), lb = random_matrix(16, 4, rng);
  const auto y = testing::random_labels(16, 4, rng);
  const auto loss = unified_loss_and_grad(u, li, y, lb, 0.37);
  CHECK(std::abs(loss.total - (loss.l_imb + 0.37 * loss.l_bal)) < 1e-12);
}

TEST_CASE("training leaves the classifier untouched and logs a consistent curve") {
  const auto clf = testing::toy_classifier(0.5, 1, 3);
  const auto before = clf.full_snapshot();
  const auto d_int = toy_intermediate(11);
  const auto cfg = small_config();
  const auto u = train_unified(clf, d_int, cfg, 4);
  CHECK(clf.full_snapshot() == before);
  CHECK(u.refiner.trained());
  REQUIRE(!u.curve.empty());
  for (const auto &rec : u.curve)
    CHECK(std::abs(rec.total - (rec.l_imb + cfg.alpha * rec.l_bal)) < 1e-12);
  const auto s = train_split(clf, d_int, cfg, 4);
  CHECK(clf.full_snapshot() == before);
  CHECK(s.refiner.trained());
}

TEST_CASE("training is seed-deterministic") {
  const auto clf = testing::toy_classifier(0.5, 1, 3);
  const auto d_int = toy_intermediate(11);
  const auto a = train_unified(clf, d_int, small_config(), 4);
  const auto b = train_unified(clf, d_int, small_config(), 4);
  CHECK(refiner_to_json(a.refiner).dump() == refiner_to_json(b.refiner).dump());
}

TEST_CASE("huge alpha pins balanced outputs to the identity") {
  const auto clf = testing::toy_classifier(0.5, 2, 3);
  auto cfg = small_config();
  cfg.alpha = 1e6;
  const auto d_int = toy_intermediate(12);
  const auto u = train_unified(clf, d_int, cfg, 5);
  const auto bal = iid_stream(toy_intermediate(13, 1000), 64, 1);
  for (const auto &b : bal.batches) {
    if (b.labels.size() < 2)
      continue;
    const auto r = u.refiner.refine(batch_signature(clf, b.features));
    CHECK(frob_from_identity(r) < 0.05);
  }
}

TEST_CASE("alpha 0.1 stays closer to the identity than alpha 0") {
  const auto clf = testing::toy_classifier(0.5, 3, 3);
  auto cfg = small_config();
  cfg.epochs = 10;
  cfg.delta = 0.1;
  const auto d_int = toy_intermediate(14);
  cfg.alpha = 0.1;
  const auto reg = train_unified(clf, d_int, cfg, 6);
  cfg.alpha = 0.0;
  const auto free = train_unified(clf, d_int, cfg, 6);
  const auto bal = iid_stream(toy_intermediate(15, 2000), 200, 1);
  double a = 0, b = 0;
  for (const auto &batch : bal.batches) {
    const auto sig = batch_signature(clf, batch.features);
    a += frob_from_identity(reg.refiner.refine(sig));
    b += frob_from_identity(free.refiner.refine(sig));
  }
  CHECK(a < b);
}

TEST_CASE("refiner files round-trip bit-exactly") {
  const auto clf = testing::toy_classifier(0.5, 1, 3);
  const auto d_int = toy_intermediate(11);
  const auto u = train_unified(clf, d_int, small_config(), 4).refiner;
  const auto s = train_split(clf, d_int, small_config(), 4).refiner;
  const BatchSignature sig{Vector{0.6, 0.2, 0.1, 0.1}, 2.5};
  const auto pu = temp_file("unified.json"), ps = temp_file("split.json");
  save_refiner(u, pu);
  save_refiner(s, ps);
  const auto u2 = load_unified(pu);
  const auto s2 = load_split(ps);
  const auto a = u.refine(sig), b = u2.refine(sig);
  CHECK(a.W == b.W);
  CHECK(a.b == b.b);
  CHECK(s.severity(2.5) == s2.severity(2.5));
  CHECK(s.generate(sig.p_bar).W == s2.generate(sig.p_bar).W);
  CHECK_THROWS_AS(load_split(pu), RefinerFormatError);
  CHECK_THROWS_AS(load_unified(ps), RefinerFormatError);

  Json j = refiner_to_json(u);
  j["format"] = "dart-refiner/9";
  CHECK_THROWS_AS(refiner_from_json(j), RefinerFormatError);
  j = refiner_to_json(u);
  j["K"] = 5;
  CHECK_THROWS_AS(refiner_from_json(j), RefinerFormatError);
  std::ofstream(pu) << "{\"format\": \"dart-ref";
  CHECK_THROWS(load_refiner(pu));
  std::filesystem::remove(pu);
  std::filesystem::remove(ps);
}

TEST_CASE("temperature matches its closed-form examples") {
  const std::vector<double> tmax(4, 10.0), tsum(4, 0.0);
  const auto t = temperature_for_batch(5.0, 0.0, tmax, tsum, 10);
  CHECK(!t.degenerate);
  CHECK(std::abs(t.T - 2.0) < 1e-12);
  const std::vector<double> smax(4, 5.0);
  CHECK(std::abs(temperature_for_batch(5.0, 0.0, smax, tsum, 10).T - 1.0) < 1e-12);
  const std::vector<double> m{3.0, 4.0}, l{1.0, -2.0};
  CHECK(std::abs(temperature_for_batch(3.5, -0.5, m, l, 7).T - 1.0) < 1e-12);
  // A = 1/K makes the denominator vanish.
  const auto deg = temperature_for_batch(0.0, 0.0, tmax, tsum, 10);
  CHECK(deg.degenerate);
  CHECK(deg.T == 1.0);
}

TEST_CASE("temperature scales with test logits when sums vanish") {
  const std::vector<double> m{6.0, 8.0}, zero{0.0, 0.0};
  const double base = temperature_for_batch(4.0, 0.0, m, zero, 10).T;
  for (double c : {0.5, 2.0, 3.0}) {
    const std::vector<double> mc{6.0 * c, 8.0 * c};
    CHECK(std::abs(temperature_for_batch(4.0, 0.0, mc, zero, 10).T - c * base) < 1e-12);
  }
}

TEST_CASE("running temperature averages per-batch values") {
  RunningTemperature rt(5.0, 0.0, 2);
  Matrix a(2, 2), b(2, 2);
  a(0, 0) = 10; a(0, 1) = -10; a(1, 0) = -10; a(1, 1) = 10;
  b(0, 0) = 5; b(0, 1) = -5; b(1, 0) = -5; b(1, 1) = 5;
  const double ta = temperature_for_batch(5.0, 0.0, std::vector<double>{10, 10},
                                          std::vector<double>{0, 0}, 2).T;
  const double tb = temperature_for_batch(5.0, 0.0, std::vector<double>{5, 5},
                                          std::vector<double>{0, 0}, 2).T;
  CHECK(rt.update(a) == doctest::Approx(ta));
  CHECK(rt.update(b) == doctest::Approx(0.5 * (ta + tb)));
  CHECK(rt.batches() == 2);
}
