// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <stdexcept>

#include "shiftlab/errors.hpp"
#include "shiftlab/ops.hpp"
#include "shiftlab/refiner.hpp"
#include "shiftlab/rng.hpp"

namespace shiftlab {

namespace {

// Gradient of CE(y, softmax(l W + b)) w.r.t. W and b, flattened as the
// refiner output (W row-major, then b).
Matrix imbalance_output_grad(const Matrix &logits, std::span<const int> labels,
                             const AffineRefinement &r, bool diagonal,
                             double &loss) {
  const std::size_t k = r.classes();
  const LossAndGrad ce =
      softmax_cross_entropy(apply_refinement(logits, r, false), labels);
  loss = ce.loss;
  const Matrix dW = matmul_tn(logits, ce.grad);
  if (diagonal) {
    Matrix g(1, k);
    for (std::size_t i = 0; i < k; ++i)
      g(0, i) = dW(i, i);
    return g;
  }
  const Vector db = column_sums(ce.grad);
  Matrix g(1, k * k + k);
  std::copy(dW.data().begin(), dW.data().end(), g.row(0).begin());
  std::copy(db.begin(), db.end(), g.row(0).begin() + k * k);
  return g;
}

} // namespace

DartLoss unified_loss_and_grad(RefinerUnified &refiner, const Matrix &logits_imb,
                               std::span<const int> labels_imb,
                               const Matrix &logits_bal, double alpha) {
  const std::size_t k = refiner.classes();
  Sequential &net = refiner.net();
  DartLoss out;

  {
    const Matrix y =
        net.forward(refiner.encode(signature_from_logits(logits_imb)));
    const AffineRefinement r = refiner.decode(y.row(0));
    net.backward(imbalance_output_grad(logits_imb, labels_imb, r, false,
                                       out.l_imb));
  }
  {
    const Matrix y =
        net.forward(refiner.encode(signature_from_logits(logits_bal)));
    const AffineRefinement r = refiner.decode(y.row(0));
    out.l_bal = mse(r.W, Matrix::identity(k)) +
                mse(std::span<const double>(r.b), Vector(k, 0.0));
    Matrix g(1, k * k + k);
    const double sw = alpha * 2.0 / static_cast<double>(k * k);
    const double sb = alpha * 2.0 / static_cast<double>(k);
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j)
        g(0, i * k + j) = sw * (r.W(i, j) - (i == j ? 1.0 : 0.0));
    for (std::size_t i = 0; i < k; ++i)
      g(0, k * k + i) = sb * r.b[i];
    net.backward(g);
  }
  out.total = out.l_imb + alpha * out.l_bal;
  return out;
}

DartLoss split_loss_and_grad(RefinerSplit &refiner, const Matrix &logits_imb,
                             std::span<const int> labels_imb,
                             const Matrix &logits_bal) {
  DartLoss out;
  const BatchSignature sig_imb = signature_from_logits(logits_imb);
  const BatchSignature sig_bal = signature_from_logits(logits_bal);

  Linear &g1 = refiner.detector();
  const double x_bal = sig_bal.d - refiner.d_offset();
  const double x_imb = sig_imb.d - refiner.d_offset();
  const double z_bal = refiner.severity_logit(sig_bal.d);
  const double z_imb = refiner.severity_logit(sig_imb.d);
  out.l_bal = bce_scalar(0.0, z_bal) + bce_scalar(1.0, z_imb);
  const double dz_bal = sigmoid(z_bal);
  const double dz_imb = sigmoid(z_imb) - 1.0;
  g1.grad_weight(0, 0) += dz_bal * x_bal + dz_imb * x_imb;
  g1.grad_bias[0] += dz_bal + dz_imb;

  Sequential &g2 = refiner.generator();
  const std::size_t k = refiner.classes();
  Matrix x(1, k, sig_imb.p_bar);
  const Matrix y = g2.forward(x);
  const AffineRefinement r = refiner.decode(y.row(0));
  g2.backward(imbalance_output_grad(logits_imb, labels_imb, r,
                                    refiner.diagonal(), out.l_imb));
  out.total = out.l_imb + out.l_bal;
  return out;
}

namespace {

struct BatchPair {
  Matrix logits_imb;
  std::vector<int> labels_imb;
  Matrix logits_bal;
};

// Walks the epoch schedule: one Dirichlet batch and one i.i.d. batch per
// iteration, both scored by the frozen classifier with batch statistics.
template <class Step>
std::vector<LossRecord> run_schedule(const MlpClassifier &classifier,
                                     const LabeledDataset &d_int,
                                     const IntermediateConfig &cfg,
                                     std::uint64_t seed, Step &&step) {
  std::vector<LossRecord> curve;
  std::size_t iteration = 0;
  auto score = [&](const Matrix &x) {
    Matrix l = classifier.logits(x, BnMode::replace);
    return cfg.logit_scale == 1.0 ? l : cfg.logit_scale * l;
  };
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const BatchStream imb = dirichlet_stream(d_int, cfg.delta, cfg.n_chunks,
                                             cfg.batch_size,
                                             derive_seed(seed, 2 * epoch + 10));
    const BatchStream bal =
        iid_stream(d_int, cfg.batch_size, derive_seed(seed, 2 * epoch + 11));
    const std::size_t n = std::min(imb.batches.size(), bal.batches.size());
    for (std::size_t i = 0; i < n; ++i) {
      const Batch &bi = imb.batches[i];
      const Batch &bb = bal.batches[i];
      if (bi.labels.size() < 2 || bb.labels.size() < 2)
        continue;
      const DartLoss loss =
          step(BatchPair{score(bi.features), bi.labels, score(bb.features)});
      if (!std::isfinite(loss.total))
        throw DivergenceError("refiner training diverged", iteration);
      curve.push_back({iteration, loss.l_imb, loss.l_bal, loss.total});
      ++iteration;
    }
  }
  return curve;
}

std::size_t steps_per_epoch(const LabeledDataset &d_int,
                            const IntermediateConfig &cfg) {
  if (cfg.batch_size < 2)
    throw std::invalid_argument("intermediate: batch_size must be >= 2");
  return (d_int.size() + cfg.batch_size - 1) / cfg.batch_size;
}

void guarded_step(Optimizer &opt, std::span<const Param> params,
                  std::size_t iteration) {
  try {
    opt.step(params);
  } catch (const std::domain_error &) {
    throw DivergenceError("refiner gradient not finite", iteration);
  }
}

void check_inputs(const MlpClassifier &classifier, const LabeledDataset &d_int,
                  const IntermediateConfig &cfg) {
  d_int.validate();
  if (d_int.classes != classifier.classes())
    throw std::invalid_argument("intermediate: class count mismatch");
  if (!(cfg.alpha >= 0.0) || !std::isfinite(cfg.alpha))
    throw std::invalid_argument("intermediate: alpha must be finite and >= 0");
  if (cfg.hidden < 1)
    throw std::invalid_argument("intermediate: hidden must be >= 1");
}

} // namespace

UnifiedTraining train_unified(const MlpClassifier &classifier,
                              const LabeledDataset &d_int,
                              const IntermediateConfig &cfg,
                              std::uint64_t seed) {
  check_inputs(classifier, d_int, cfg);
  UnifiedTraining out{
      RefinerUnified(classifier.classes(), cfg.hidden, derive_seed(seed, 1)),
      {}};
  out.refiner.alpha = cfg.alpha;
  OptimizerConfig oc;
  oc.kind = OptimizerKind::adam;
  oc.learning_rate = cfg.learning_rate;
  oc.cosine = cfg.cosine;
  oc.total_steps = cfg.epochs * steps_per_epoch(d_int, cfg);
  Optimizer opt(oc);
  std::size_t iteration = 0;
  out.curve = run_schedule(
      classifier, d_int, cfg, seed, [&](const BatchPair &b) {
        RefinerUnified &r = out.refiner;
        r.net().zero_grad();
        const DartLoss loss = unified_loss_and_grad(
            r, b.logits_imb, b.labels_imb, b.logits_bal, cfg.alpha);
        if (std::isfinite(loss.total)) {
          const auto params = r.net().params();
          guarded_step(opt, params, iteration);
        }
        ++iteration;
        return loss;
      });
  out.refiner.mark_trained();
  return out;
}

SplitTraining train_split(const MlpClassifier &classifier,
                          const LabeledDataset &d_int,
                          const IntermediateConfig &cfg, std::uint64_t seed) {
  check_inputs(classifier, d_int, cfg);
  SplitTraining out{RefinerSplit(classifier.classes(), cfg.hidden,
                                 cfg.diagonal, derive_seed(seed, 1)),
                    {}};
  const std::size_t total = cfg.epochs * steps_per_epoch(d_int, cfg);
  OptimizerConfig detect;
  detect.kind = OptimizerKind::adam;
  detect.learning_rate = cfg.detect_learning_rate;
  detect.cosine = cfg.cosine;
  detect.total_steps = total;
  OptimizerConfig gen = detect;
  gen.learning_rate = cfg.refine_learning_rate;
  Optimizer opt_detect(detect), opt_gen(gen);
  std::size_t iteration = 0;
  out.curve = run_schedule(
      classifier, d_int, cfg, seed, [&](const BatchPair &b) {
        RefinerSplit &r = out.refiner;
        r.detector().zero_grad();
        r.generator().zero_grad();
        const DartLoss loss =
            split_loss_and_grad(r, b.logits_imb, b.labels_imb, b.logits_bal);
        if (std::isfinite(loss.total)) {
          std::vector<Param> dp;
          r.detector().collect(dp, "detector");
          guarded_step(opt_detect, dp, iteration);
          const auto gp = r.generator().params();
          guarded_step(opt_gen, gp, iteration);
        }
        ++iteration;
        return loss;
      });
  out.refiner.mark_trained();
  return out;
}

} // namespace shiftlab
