// SPDX-License-Identifier: Apache-2.0
#include "shiftlab/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace shiftlab {

Matrix stable_softmax(const Matrix &logits) {
  if (!logits.all_finite())
    throw std::domain_error("softmax: non-finite logit");
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto in = logits.row(i);
    auto o = out.row(i);
    const double mx = *std::max_element(in.begin(), in.end());
    double sum = 0.0;
    for (std::size_t k = 0; k < in.size(); ++k) {
      o[k] = std::exp(in[k] - mx);
      sum += o[k];
    }
    for (double &v : o)
      v /= sum;
  }
  return out;
}

double cross_entropy(const Matrix &target_onehot, const Matrix &probs) {
  if (!target_onehot.same_shape(probs))
    throw ShapeError("cross_entropy: shape mismatch");
  if (probs.rows() == 0)
    return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < probs.rows(); ++i)
    for (std::size_t k = 0; k < probs.cols(); ++k) {
      const double t = target_onehot(i, k);
      if (t != 0.0)
        total -= t * std::log(std::max(probs(i, k), kProbClamp));
    }
  return total / static_cast<double>(probs.rows());
}

double uniform_divergence(std::span<const double> probs_row) {
  double s = 0.0;
  for (double q : probs_row)
    s += std::log(std::max(q, kProbClamp));
  return -s / static_cast<double>(probs_row.size());
}

double mse(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw ShapeError("mse: length mismatch");
  if (a.empty())
    return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

double mse(const Matrix &a, const Matrix &b) {
  if (!a.same_shape(b))
    throw ShapeError("mse: shape mismatch");
  return mse(a.data(), b.data());
}

double sigmoid(double z) {
  if (z >= 0.0)
    return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double bce_scalar(double target, double logit) {
  if (!std::isfinite(logit))
    throw std::domain_error("bce: non-finite logit");
  // -[t log s(z) + (1-t) log(1-s(z))] = max(z,0) - t z + log1p(exp(-|z|))
  return std::max(logit, 0.0) - target * logit +
         std::log1p(std::exp(-std::abs(logit)));
}

double entropy(std::span<const double> probs_row) {
  double h = 0.0;
  for (double p : probs_row)
    if (p > 0.0)
      h -= p * std::log(p);
  return h;
}

Matrix one_hot(std::span<const int> labels, std::size_t classes) {
  Matrix m(labels.size(), classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes)
      throw std::out_of_range("one_hot: label " + std::to_string(labels[i]));
    m(i, static_cast<std::size_t>(labels[i])) = 1.0;
  }
  return m;
}

LossAndGrad softmax_cross_entropy(const Matrix &logits,
                                  std::span<const int> labels) {
  if (labels.size() != logits.rows())
    throw ShapeError("softmax_cross_entropy: label count mismatch");
  LossAndGrad out;
  out.grad = stable_softmax(logits);
  const double inv_m = 1.0 / static_cast<double>(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    // Log-softmax from the logits: exact, and consistent with p - y where a
    // clamped probability would flatten the loss.
    const auto row = logits.row(i);
    const double top = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row)
      z += std::exp(v - top);
    out.loss += top + std::log(z) - row[y];
    out.grad(i, y) -= 1.0;
  }
  out.loss *= inv_m;
  for (double &g : out.grad.data())
    g *= inv_m;
  return out;
}

LossAndGrad softmax_entropy(const Matrix &logits) {
  LossAndGrad out;
  const Matrix p = stable_softmax(logits);
  out.grad = Matrix(logits.rows(), logits.cols());
  const double inv_m = 1.0 / static_cast<double>(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto pr = p.row(i);
    // Log-probabilities from logits directly so saturated rows stay finite.
    auto lr = logits.row(i);
    const double mx = *std::max_element(lr.begin(), lr.end());
    double lse = 0.0;
    for (double v : lr)
      lse += std::exp(v - mx);
    lse = mx + std::log(lse);
    double h = 0.0;
    for (std::size_t k = 0; k < pr.size(); ++k)
      h -= pr[k] * (lr[k] - lse);
    out.loss += h;
    // dH/dz_k = -p_k (log p_k + H)
    for (std::size_t k = 0; k < pr.size(); ++k)
      out.grad(i, k) = -pr[k] * ((lr[k] - lse) + h) * inv_m;
  }
  out.loss *= inv_m;
  return out;
}

} // namespace shiftlab
