// SPDX-License-Identifier: Apache-2.0
#include "shiftlab/adapt.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "shiftlab/errors.hpp"
#include "shiftlab/ops.hpp"
#include "shiftlab/rng.hpp"

namespace shiftlab {

Method parse_method(std::string_view name) {
  if (name == "noadapt")
    return Method::noadapt;
  if (name == "bnadapt")
    return Method::bnadapt;
  if (name == "tent")
    return Method::tent;
  if (name == "pl")
    return Method::pl;
  throw std::invalid_argument("unknown method '" + std::string(name) + "'");
}

std::string_view to_string(Method m) noexcept {
  switch (m) {
  case Method::noadapt:
    return "noadapt";
  case Method::bnadapt:
    return "bnadapt";
  case Method::tent:
    return "tent";
  case Method::pl:
    return "pl";
  }
  return "?";
}

double accuracy(const Matrix &logits, std::span<const int> labels) {
  if (logits.rows() != labels.size() || labels.empty())
    throw ShapeError("accuracy: label count mismatch");
  const auto pred = argmax_rows(logits);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    hit += pred[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

double pretrain(MlpClassifier &classifier, const LabeledDataset &data,
                const PretrainConfig &cfg, std::uint64_t seed) {
  data.validate();
  if (data.classes != classifier.classes())
    throw std::invalid_argument("pretrain: class count mismatch");
  if (cfg.batch_size < 2)
    throw std::invalid_argument("pretrain: batch_size must be >= 2");
  OptimizerConfig oc = cfg.optimizer;
  if (oc.cosine && oc.total_steps == 0)
    oc.total_steps =
        cfg.epochs * ((data.size() + cfg.batch_size - 1) / cfg.batch_size);
  Optimizer opt(oc);
  std::size_t iteration = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const BatchStream stream =
        iid_stream(data, cfg.batch_size, derive_seed(seed, 1000 + epoch));
    for (const Batch &b : stream.batches) {
      if (b.labels.size() < 2)
        continue;
      classifier.zero_grad();
      const Matrix logits = classifier.forward(b.features, BnMode::train);
      const LossAndGrad ce = softmax_cross_entropy(logits, b.labels);
      if (!std::isfinite(ce.loss))
        throw DivergenceError("pretraining diverged", iteration);
      classifier.backward(ce.grad);
      try {
        opt.step(classifier.params());
      } catch (const std::domain_error &) {
        throw DivergenceError("pretraining gradient not finite", iteration);
      }
      ++iteration;
    }
  }
  const double acc =
      accuracy(classifier.logits(data.features, BnMode::eval), data.labels);
  if (acc < cfg.accuracy_floor)
    throw std::runtime_error("pretrain: source accuracy below floor");
  return acc;
}

Matrix bn_adapt_forward(const MlpClassifier &classifier, const Matrix &batch) {
  return classifier.logits(batch, BnMode::replace);
}

namespace {

Matrix maybe_refine(const Matrix &logits, const AffineRefinement *r) {
  return r ? apply_refinement(logits, *r, true) : logits;
}

Matrix maybe_refine_backward(const Matrix &logits, const AffineRefinement *r,
                             const Matrix &grad) {
  return r ? apply_refinement_backward(logits, *r, true, grad) : grad;
}

void step_bn_affine(MlpClassifier &classifier, Optimizer &optimizer) {
  optimizer.step(classifier.bn_affine_params());
}

} // namespace

double tent_objective(const MlpClassifier &classifier, const Matrix &batch,
                      const AffineRefinement *refinement) {
  const Matrix logits = classifier.logits(batch, BnMode::replace);
  return softmax_entropy(maybe_refine(logits, refinement)).loss;
}

double tent_step(MlpClassifier &classifier, const Matrix &batch,
                 const AffineRefinement *refinement, Optimizer &optimizer) {
  classifier.zero_grad();
  const Matrix logits = classifier.forward(batch, BnMode::replace);
  const LossAndGrad ent = softmax_entropy(maybe_refine(logits, refinement));
  classifier.backward(maybe_refine_backward(logits, refinement, ent.grad));
  step_bn_affine(classifier, optimizer);
  return ent.loss;
}

std::size_t pl_step(MlpClassifier &classifier, const Matrix &batch,
                    const AffineRefinement *refinement, Optimizer &optimizer,
                    double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0 + kProbClamp))
    throw std::invalid_argument("pl: threshold must lie in (0, 1]");
  classifier.zero_grad();
  const Matrix logits = classifier.forward(batch, BnMode::replace);
  const Matrix scored = maybe_refine(logits, refinement);
  const Matrix probs = stable_softmax(scored);
  const std::size_t k = probs.cols();

  std::vector<std::size_t> chosen;
  std::vector<int> labels;
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    auto row = probs.row(i);
    const auto top = std::max_element(row.begin(), row.end());
    if (*top >= threshold) {
      chosen.push_back(i);
      labels.push_back(static_cast<int>(top - row.begin()));
    }
  }
  if (chosen.empty())
    return 0;

  Matrix grad(scored.rows(), k);
  const double inv = 1.0 / static_cast<double>(chosen.size());
  for (std::size_t n = 0; n < chosen.size(); ++n) {
    auto p = probs.row(chosen[n]);
    auto g = grad.row(chosen[n]);
    for (std::size_t j = 0; j < k; ++j)
      g[j] = (p[j] - (static_cast<int>(j) == labels[n] ? 1.0 : 0.0)) * inv;
  }
  classifier.backward(maybe_refine_backward(logits, refinement, grad));
  step_bn_affine(classifier, optimizer);
  return chosen.size();
}

RunResult run_stream(MlpClassifier classifier, const BatchStream &stream,
                     const AdaptConfig &config, const Refiner *refiner) {
  if (stream.batches.empty())
    throw std::invalid_argument("run_stream: empty stream");
  const std::size_t k = classifier.classes();
  if (stream.classes != k)
    throw std::invalid_argument("run_stream: stream class count mismatch");
  if (config.use_dart) {
    if (!refiner)
      throw std::invalid_argument("run_stream: DART requested without refiner");
    if (refiner_classes(*refiner) != k)
      throw std::invalid_argument("run_stream: refiner K does not match model");
  }

  const MlpClassifier frozen = classifier;
  Optimizer optimizer(config.optimizer);
  RunResult out;
  out.confusion = Matrix(k, k);
  out.counts.assign(k, 0);
  std::size_t correct = 0, total = 0;

  for (const Batch &b : stream.batches) {
    if (b.labels.empty())
      continue;
    BatchTrace t;
    BatchSignature sig =
        batch_signature(frozen, b.features, config.logit_scale);
    std::optional<AffineRefinement> r;
    if (config.use_dart) {
      r = refine(*refiner, sig);
      t.refined = !r->is_identity();
    }
    const BnMode mode =
        config.method == Method::noadapt ? BnMode::eval : BnMode::replace;
    Matrix logits = classifier.logits(b.features, mode);
    if (config.logit_scale != 1.0)
      logits = config.logit_scale * logits;
    if (r)
      logits = apply_refinement(logits, *r, false);

    const auto pred = argmax_rows(logits);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const auto y = static_cast<std::size_t>(b.labels[i]);
      out.confusion(y, static_cast<std::size_t>(pred[i])) += 1.0;
      ++out.counts[y];
      hit += pred[i] == b.labels[i];
    }
    correct += hit;
    total += pred.size();
    t.p_bar = std::move(sig.p_bar);
    t.d = sig.d;
    t.size = pred.size();
    t.accuracy = static_cast<double>(hit) / static_cast<double>(t.size);
    out.trace.push_back(std::move(t));

    const AffineRefinement *rp = r ? &*r : nullptr;
    if (config.method == Method::tent)
      tent_step(classifier, b.features, rp, optimizer);
    else if (config.method == Method::pl)
      pl_step(classifier, b.features, rp, optimizer, config.pl_threshold);
  }
  if (total == 0)
    throw std::invalid_argument("run_stream: stream holds no samples");

  out.accuracy = static_cast<double>(correct) / static_cast<double>(total);
  out.per_class_accuracy.assign(k, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t y = 0; y < k; ++y) {
    if (out.counts[y] == 0)
      continue;
    const double n = static_cast<double>(out.counts[y]);
    out.per_class_accuracy[y] = out.confusion(y, y) / n;
    for (double &v : out.confusion.row(y))
      v /= n;
  }
  return out;
}

Json run_result_to_json(const RunResult &r) {
  Json j;
  j["accuracy"] = r.accuracy;
  Json per_class = Json::array();
  for (double v : r.per_class_accuracy)
    per_class.push_back(std::isnan(v) ? Json(nullptr) : Json(v));
  j["per_class_accuracy"] = per_class;
  Json conf = Json::array();
  for (std::size_t i = 0; i < r.confusion.rows(); ++i) {
    auto row = r.confusion.row(i);
    conf.push_back(std::vector<double>(row.begin(), row.end()));
  }
  j["confusion"] = conf;
  j["counts"] = r.counts;
  Json trace = Json::array();
  for (const BatchTrace &t : r.trace)
    trace.push_back({{"p_bar", t.p_bar},
                     {"d", t.d},
                     {"accuracy", t.accuracy},
                     {"size", t.size},
                     {"refined", t.refined}});
  j["trace"] = trace;
  return j;
}

std::string confusion_csv(const Matrix &confusion) {
  std::ostringstream os;
  os << std::setprecision(17);
  for (std::size_t j = 0; j < confusion.cols(); ++j)
    os << (j ? "," : "") << j;
  os << '\n';
  for (std::size_t i = 0; i < confusion.rows(); ++i) {
    for (std::size_t j = 0; j < confusion.cols(); ++j)
      os << (j ? "," : "") << confusion(i, j);
    os << '\n';
  }
  return os.str();
}

} // namespace shiftlab
