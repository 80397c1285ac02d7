// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "shiftlab/layers.hpp"

namespace shiftlab {

enum class OptimizerKind { sgd_momentum, adam };

OptimizerKind parse_optimizer_kind(std::string_view name);
std::string_view to_string(OptimizerKind kind) noexcept;

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 1e-3;
  double momentum = 0.9; // sgd_momentum
  double beta1 = 0.9;    // adam
  double beta2 = 0.999;
  double epsilon = 1e-8;
  bool cosine = false;
  std::size_t total_steps = 0; // cosine horizon T
};

/// SGD with momentum or Adam, with an optional cosine-annealed rate
/// lr_t = lr0 * 0.5 * (1 + cos(pi * t / T)), t clamped to T.
class Optimizer {
public:
  explicit Optimizer(OptimizerConfig config);

  const OptimizerConfig &config() const noexcept { return config_; }
  std::size_t steps_taken() const noexcept { return step_; }

  /// Learning rate that the next step() will use.
  double current_lr() const noexcept;

  /// Applies one update to every parameter from its grad buffer. Throws
  /// std::domain_error on a NaN/inf gradient (parameters untouched) and
  /// ShapeError when the parameter layout changed since the first step.
  void step(std::span<const Param> params);

private:
  OptimizerConfig config_;
  std::size_t step_ = 0;
  std::vector<Vector> first_;  // momentum buffer / Adam m
  std::vector<Vector> second_; // Adam v
};

} // namespace shiftlab
