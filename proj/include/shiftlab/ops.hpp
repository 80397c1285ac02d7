// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "shiftlab/matrix.hpp"

namespace shiftlab {

/// Lower clamp applied to every probability before a log.
inline constexpr double kProbClamp = 1e-12;

/// Row-wise softmax with max subtraction. Throws std::domain_error on
/// non-finite input.
Matrix stable_softmax(const Matrix &logits);

/// Mean over rows of -sum_k target * log(max(prob, kProbClamp)).
double cross_entropy(const Matrix &target_onehot, const Matrix &probs);

/// D(u, q) = -(1/K) sum_k log q_k, the cross entropy from the uniform
/// distribution to q. Minimum ln K at q = u.
double uniform_divergence(std::span<const double> probs_row);

/// Mean squared entrywise difference.
double mse(const Matrix &a, const Matrix &b);
double mse(std::span<const double> a, std::span<const double> b);

/// Stable binary cross entropy on a logit.
double bce_scalar(double target, double logit);
double sigmoid(double z);

/// Shannon entropy (natural log) of one probability row.
double entropy(std::span<const double> probs_row);

Matrix one_hot(std::span<const int> labels, std::size_t classes);

struct LossAndGrad {
  double loss = 0.0;
  Matrix grad; // d loss / d logits
};

/// Mean cross entropy of softmax(logits) against integer labels, computed
/// through log-softmax (no probability clamp).
LossAndGrad softmax_cross_entropy(const Matrix &logits,
                                  std::span<const int> labels);

/// Mean prediction entropy of softmax(logits), with its logit gradient.
LossAndGrad softmax_entropy(const Matrix &logits);

} // namespace shiftlab
