// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "shiftlab/matrix.hpp"
#include "shiftlab/rng.hpp"

namespace shiftlab {

/// How a batch-normalization layer picks its statistics.
///  train:   batch statistics, running statistics updated
///  eval:    running statistics
///  replace: batch statistics, running statistics untouched (BNAdapt)
enum class BnMode { train, eval, replace };

/// View of one parameter tensor and its gradient buffer.
struct Param {
  std::string name;
  std::span<double> value;
  std::span<double> grad;
  bool bn_affine = false;
};

class Linear {
public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out);

  /// Uniform(-1/sqrt(in), 1/sqrt(in)) for weight and bias.
  void init_uniform(Rng &rng);

  std::size_t in_features() const noexcept { return weight.rows(); }
  std::size_t out_features() const noexcept { return weight.cols(); }

  Matrix forward(const Matrix &x);
  Matrix infer(const Matrix &x) const;
  Matrix backward(const Matrix &grad_out);
  void zero_grad();
  void collect(std::vector<Param> &out, const std::string &prefix);

  Matrix weight; // in x out
  Vector bias;   // out
  Matrix grad_weight;
  Vector grad_bias;

private:
  Matrix input_;
};

class BatchNorm {
public:
  static constexpr double kDefaultMomentum = 0.1;
  static constexpr double kDefaultEpsilon = 1e-5;

  BatchNorm() = default;
  explicit BatchNorm(std::size_t width, double momentum = kDefaultMomentum,
                     double epsilon = kDefaultEpsilon);

  std::size_t width() const noexcept { return gamma.size(); }
  void set_mode(BnMode mode) noexcept { mode_ = mode; }
  std::optional<BnMode> mode() const noexcept { return mode_; }

  /// Throws std::logic_error when no mode has been set.
  Matrix forward(const Matrix &x);
  /// Cache-free evaluation; `mode` must be eval or replace.
  Matrix infer(const Matrix &x, BnMode mode) const;
  Matrix backward(const Matrix &grad_out);
  void zero_grad();
  void collect(std::vector<Param> &out, const std::string &prefix);

  Vector gamma, beta;
  Vector running_mean, running_var;
  Vector grad_gamma, grad_beta;
  double momentum = kDefaultMomentum;
  double epsilon = kDefaultEpsilon;

private:
  std::optional<BnMode> mode_;
  Matrix xhat_;
  Vector inv_std_;
  bool batch_stats_ = false;
};

class Relu {
public:
  Matrix forward(const Matrix &x);
  Matrix infer(const Matrix &x) const;
  Matrix backward(const Matrix &grad_out) const;

private:
  Matrix input_;
};

using Layer = std::variant<Linear, BatchNorm, Relu>;

/// A fixed stack of layers with hand-written backward passes.
class Sequential {
public:
  Sequential() = default;
  explicit Sequential(std::vector<Layer> layers) : layers_(std::move(layers)) {}

  std::vector<Layer> &layers() noexcept { return layers_; }
  const std::vector<Layer> &layers() const noexcept { return layers_; }

  void set_bn_mode(BnMode mode);

  /// Training forward; caches activations for backward().
  Matrix forward(const Matrix &x);
  /// Pure forward, no caches, no running-statistic updates.
  Matrix infer(const Matrix &x, BnMode mode) const;
  /// Accumulates parameter gradients; returns d loss / d input.
  Matrix backward(const Matrix &grad_out);
  void zero_grad();
  std::vector<Param> params();

private:
  std::vector<Layer> layers_;
};

/// Zeroes gradients, runs forward then backward with `loss_grad` as the
/// output gradient, and returns a copy of every parameter gradient in
/// params() order.
std::vector<Vector> forward_backward(Sequential &net, const Matrix &input,
                                     const Matrix &loss_grad);

} // namespace shiftlab
