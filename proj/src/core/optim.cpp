// SPDX-License-Identifier: Apache-2.0
#include "shiftlab/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace shiftlab {

OptimizerKind parse_optimizer_kind(std::string_view name) {
  if (name == "adam")
    return OptimizerKind::adam;
  if (name == "sgd" || name == "sgd_momentum")
    return OptimizerKind::sgd_momentum;
  throw std::invalid_argument("unknown optimizer '" + std::string(name) + "'");
}

std::string_view to_string(OptimizerKind kind) noexcept {
  return kind == OptimizerKind::adam ? "adam" : "sgd_momentum";
}

Optimizer::Optimizer(OptimizerConfig config) : config_(config) {
  if (!(config_.learning_rate >= 0.0))
    throw std::invalid_argument("optimizer: learning rate must be >= 0");
  if (config_.cosine && config_.total_steps == 0)
    throw std::invalid_argument("optimizer: cosine schedule needs total_steps");
}

double Optimizer::current_lr() const noexcept {
  if (!config_.cosine)
    return config_.learning_rate;
  const double t = static_cast<double>(std::min(step_, config_.total_steps));
  const double horizon = static_cast<double>(config_.total_steps);
  return config_.learning_rate * 0.5 *
         (1.0 + std::cos(std::numbers::pi * t / horizon));
}

void Optimizer::step(std::span<const Param> params) {
  for (const auto &p : params)
    for (double g : p.grad)
      if (!std::isfinite(g))
        throw std::domain_error("optimizer: non-finite gradient in " + p.name);

  if (first_.empty()) {
    for (const auto &p : params) {
      first_.emplace_back(p.value.size(), 0.0);
      second_.emplace_back(p.value.size(), 0.0);
    }
  } else {
    if (first_.size() != params.size())
      throw ShapeError("optimizer: parameter count changed");
    for (std::size_t i = 0; i < params.size(); ++i)
      if (first_[i].size() != params[i].value.size())
        throw ShapeError("optimizer: shape changed for " + params[i].name);
  }

  const double lr = std::max(0.0, current_lr());
  ++step_;

  if (config_.kind == OptimizerKind::sgd_momentum) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto &buf = first_[i];
      const auto &p = params[i];
      for (std::size_t j = 0; j < buf.size(); ++j) {
        buf[j] = config_.momentum * buf[j] + p.grad[j];
        p.value[j] -= lr * buf[j];
      }
    }
    return;
  }

  const double t = static_cast<double>(step_);
  const double bc1 = 1.0 - std::pow(config_.beta1, t);
  const double bc2 = 1.0 - std::pow(config_.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto &m = first_[i];
    auto &v = second_[i];
    const auto &p = params[i];
    for (std::size_t j = 0; j < m.size(); ++j) {
      const double g = p.grad[j];
      m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g;
      v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g * g;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p.value[j] -= lr * mhat / (std::sqrt(vhat) + config_.epsilon);
    }
  }
}

} // namespace shiftlab
