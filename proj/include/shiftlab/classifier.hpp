// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "shiftlab/layers.hpp"
#include "shiftlab/serialize.hpp"

namespace shiftlab {

/// Linear -> BN -> ReLU blocks followed by a Linear head of width K.
class MlpClassifier {
public:
  MlpClassifier() = default;
  MlpClassifier(std::size_t input_dim, std::vector<std::size_t> hidden,
                std::size_t classes, std::uint64_t seed);

  std::size_t input_dim() const noexcept { return input_dim_; }
  std::size_t classes() const noexcept { return classes_; }
  const std::vector<std::size_t> &hidden() const noexcept { return hidden_; }

  /// Pure evaluation (eval or replace mode); never touches any state.
  Matrix logits(const Matrix &x, BnMode mode) const;

  /// Caching forward for a following backward(). Train mode updates the
  /// running statistics.
  Matrix forward(const Matrix &x, BnMode mode);
  Matrix backward(const Matrix &grad_logits);
  void zero_grad() { net_.zero_grad(); }

  std::vector<Param> params();
  std::vector<Param> bn_affine_params();

  /// Every learnable value (weights, biases, BN gamma/beta) in a fixed
  /// order, for byte comparisons.
  std::vector<double> learnable_snapshot() const;
  /// Learnable values plus BN running statistics.
  std::vector<double> full_snapshot() const;

  Sequential &net() noexcept { return net_; }
  const Sequential &net() const noexcept { return net_; }

  /// {"format": "shiftlab-model/1", "input_dim", "hidden", "classes",
  ///  "layers": [...]}
  Json to_json() const;
  static MlpClassifier from_json(const Json &j);

private:
  std::size_t input_dim_ = 0;
  std::size_t classes_ = 0;
  std::vector<std::size_t> hidden_;
  Sequential net_;
};

} // namespace shiftlab
