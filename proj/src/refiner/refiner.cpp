// SPDX-License-Identifier: Apache-2.0
#include "shiftlab/refiner.hpp"

#include <cmath>
#include <stdexcept>

#include "shiftlab/kernels.hpp"
#include "shiftlab/ops.hpp"
#include "shiftlab/rng.hpp"

namespace shiftlab {

BatchSignature signature_from_logits(const Matrix &logits) {
  if (logits.rows() == 0)
    throw ShapeError("signature: empty batch");
  const Matrix p = stable_softmax(logits);
  BatchSignature sig;
  sig.p_bar = column_sums(p);
  const double inv_m = 1.0 / static_cast<double>(p.rows());
  for (double &v : sig.p_bar)
    v *= inv_m;
  double d = 0.0;
  for (std::size_t i = 0; i < p.rows(); ++i)
    d += uniform_divergence(p.row(i));
  sig.d = d * inv_m;
  return sig;
}

BatchSignature batch_signature(const MlpClassifier &frozen, const Matrix &batch,
                               double logit_scale) {
  Matrix logits = frozen.logits(batch, BnMode::replace);
  if (logit_scale != 1.0)
    logits = logit_scale * logits;
  return signature_from_logits(logits);
}

AffineRefinement AffineRefinement::identity(std::size_t classes) {
  return {Matrix::identity(classes), Vector(classes, 0.0)};
}

bool AffineRefinement::is_identity() const {
  const std::size_t k = classes();
  for (std::size_t i = 0; i < k; ++i) {
    if (b[i] != 0.0)
      return false;
    for (std::size_t j = 0; j < k; ++j)
      if (W(i, j) != (i == j ? 1.0 : 0.0))
        return false;
  }
  return true;
}

Matrix apply_refinement(const Matrix &logits, const AffineRefinement &r,
                        bool preserve_norm) {
  if (logits.cols() != r.W.rows() || r.W.rows() != r.W.cols() ||
      r.b.size() != r.W.cols())
    throw ShapeError("apply_refinement: shape mismatch");
  Matrix out = matmul(logits, r.W);
  add_row_vector(out, r.b);
  if (!preserve_norm)
    return out;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    const double refined = norm2(out.row(i));
    if (refined == 0.0)
      continue;
    const double scale = norm2(logits.row(i)) / refined;
    for (double &v : out.row(i))
      v *= scale;
  }
  return out;
}

Matrix apply_refinement_backward(const Matrix &logits,
                                 const AffineRefinement &r, bool preserve_norm,
                                 const Matrix &grad_out) {
  if (!grad_out.same_shape(logits))
    throw ShapeError("apply_refinement_backward: shape mismatch");
  if (!preserve_norm)
    return matmul_nt(grad_out, r.W);

  Matrix refined = matmul(logits, r.W);
  add_row_vector(refined, r.b);
  const std::size_t k = logits.cols();
  Matrix grad_refined(logits.rows(), k);
  Vector extra(logits.rows(), 0.0); // (g . r_hat) / |l| per row
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto g = grad_out.row(i);
    auto rr = refined.row(i);
    auto gr = grad_refined.row(i);
    const double n = norm2(rr);
    if (n == 0.0) {
      std::copy(g.begin(), g.end(), gr.begin());
      continue;
    }
    const double s = norm2(logits.row(i));
    const double g_dot_rhat = kernels::dot(g.data(), rr.data(), k) / n;
    for (std::size_t j = 0; j < k; ++j)
      gr[j] = (s / n) * (g[j] - g_dot_rhat * rr[j] / n);
    extra[i] = s > 0.0 ? g_dot_rhat / s : 0.0;
  }
  Matrix grad = matmul_nt(grad_refined, r.W);
  for (std::size_t i = 0; i < logits.rows(); ++i)
    if (extra[i] != 0.0)
      kernels::axpy(extra[i], logits.row(i).data(), grad.row(i).data(), k);
  return grad;
}

// ---- unified --------------------------------------------------------------

namespace {

// Zero weights, bias = identity transform, so an untrained head emits (I, 0).
void init_identity_head(Linear &head, std::size_t classes, bool diagonal) {
  std::fill(head.weight.data().begin(), head.weight.data().end(), 0.0);
  std::fill(head.bias.begin(), head.bias.end(), 0.0);
  if (diagonal) {
    for (std::size_t i = 0; i < classes; ++i)
      head.bias[i] = 1.0;
  } else {
    for (std::size_t i = 0; i < classes; ++i)
      head.bias[i * classes + i] = 1.0;
  }
}

Sequential two_layer(std::size_t in, std::size_t hidden, std::size_t out,
                     Rng &rng) {
  Linear first(in, hidden);
  first.init_uniform(rng);
  Linear second(hidden, out);
  second.init_uniform(rng);
  std::vector<Layer> layers;
  layers.emplace_back(std::move(first));
  layers.emplace_back(Relu{});
  layers.emplace_back(std::move(second));
  return Sequential(std::move(layers));
}

} // namespace

RefinerUnified::RefinerUnified(std::size_t classes, std::size_t hidden,
                               std::uint64_t seed)
    : classes_(classes), hidden_(hidden),
      d_offset_(std::log(static_cast<double>(classes))) {
  if (classes < 2 || hidden < 1)
    throw std::invalid_argument("refiner: need K >= 2 and hidden >= 1");
  Rng rng = make_rng(seed, 0xf1);
  net_ = two_layer(classes + 1, hidden, classes * classes + classes, rng);
  init_identity_head(std::get<Linear>(net_.layers().back()), classes, false);
}

Matrix RefinerUnified::encode(const BatchSignature &sig) const {
  if (sig.p_bar.size() != classes_)
    throw ShapeError("refiner: signature has wrong class count");
  Matrix x(1, classes_ + 1);
  std::copy(sig.p_bar.begin(), sig.p_bar.end(), x.row(0).begin());
  x(0, classes_) = sig.d - d_offset_;
  return x;
}

AffineRefinement RefinerUnified::decode(std::span<const double> output) const {
  const std::size_t k = classes_;
  if (output.size() != k * k + k)
    throw ShapeError("refiner: output width mismatch");
  AffineRefinement r;
  r.W = Matrix(k, k, std::vector<double>(output.begin(), output.begin() + k * k));
  r.b.assign(output.begin() + k * k, output.end());
  return r;
}

AffineRefinement RefinerUnified::evaluate(const BatchSignature &sig) const {
  const Matrix out = net_.infer(encode(sig), BnMode::eval);
  return decode(out.row(0));
}

AffineRefinement RefinerUnified::refine(const BatchSignature &sig) const {
  if (!trained_)
    throw UntrainedRefinerError();
  return evaluate(sig);
}

// ---- split ----------------------------------------------------------------

RefinerSplit::RefinerSplit(std::size_t classes, std::size_t hidden,
                           bool diagonal, std::uint64_t seed)
    : classes_(classes), hidden_(hidden), diagonal_(diagonal),
      d_offset_(std::log(static_cast<double>(classes))), detector_(1, 1) {
  if (classes < 2 || hidden < 1)
    throw std::invalid_argument("refiner: need K >= 2 and hidden >= 1");
  Rng rng = make_rng(seed, 0xf2);
  const std::size_t out = diagonal ? classes : classes * classes + classes;
  generator_ = two_layer(classes, hidden, out, rng);
  init_identity_head(std::get<Linear>(generator_.layers().back()), classes,
                     diagonal);
}

double RefinerSplit::severity_logit(double d) const {
  return detector_.weight(0, 0) * (d - d_offset_) + detector_.bias[0];
}

double RefinerSplit::severity(double d) const {
  return sigmoid(severity_logit(d));
}

AffineRefinement RefinerSplit::decode(std::span<const double> output) const {
  const std::size_t k = classes_;
  if (diagonal_) {
    if (output.size() != k)
      throw ShapeError("refiner: output width mismatch");
    AffineRefinement r{Matrix(k, k), Vector(k, 0.0)};
    for (std::size_t i = 0; i < k; ++i)
      r.W(i, i) = output[i];
    return r;
  }
  if (output.size() != k * k + k)
    throw ShapeError("refiner: output width mismatch");
  AffineRefinement r;
  r.W = Matrix(k, k, std::vector<double>(output.begin(), output.begin() + k * k));
  r.b.assign(output.begin() + k * k, output.end());
  return r;
}

AffineRefinement RefinerSplit::generate(std::span<const double> p_bar) const {
  if (p_bar.size() != classes_)
    throw ShapeError("refiner: signature has wrong class count");
  Matrix x(1, classes_, std::vector<double>(p_bar.begin(), p_bar.end()));
  const Matrix out = generator_.infer(x, BnMode::eval);
  return decode(out.row(0));
}

AffineRefinement RefinerSplit::refine(const BatchSignature &sig) const {
  if (!trained_)
    throw UntrainedRefinerError();
  if (severity(sig.d) > 0.5)
    return generate(sig.p_bar);
  return AffineRefinement::identity(classes_);
}

AffineRefinement refine(const Refiner &refiner, const BatchSignature &sig) {
  return std::visit([&](const auto &r) { return r.refine(sig); }, refiner);
}

std::size_t refiner_classes(const Refiner &refiner) {
  return std::visit([](const auto &r) { return r.classes(); }, refiner);
}

} // namespace shiftlab
