// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <numeric>

#include "shiftlab/refiner.hpp"

namespace shiftlab {

namespace {
constexpr double kDegenerate = 1e-12;

double mean_of(std::span<const double> v) {
  if (v.empty())
    throw std::invalid_argument("temperature: empty batch");
  return std::accumulate(v.begin(), v.end(), 0.0) /
         static_cast<double>(v.size());
}
} // namespace

TemperatureEstimate temperature_for_batch(double train_max_logit_mean,
                                          double train_logit_sum,
                                          std::span<const double> test_max_logits,
                                          std::span<const double> test_logit_sums,
                                          std::size_t classes) {
  if (test_max_logits.size() != test_logit_sums.size())
    throw ShapeError("temperature: statistic lengths differ");
  const double k = static_cast<double>(classes);
  const double m_te = mean_of(test_max_logits);
  const double l_te = mean_of(test_logit_sums);
  const double a = (1.0 + train_max_logit_mean) / (k + train_logit_sum);
  const double denom = k * a - 1.0;
  if (!std::isfinite(a) || std::abs(denom) < kDegenerate)
    return {1.0, true};
  return {(m_te - l_te * a) / denom, false};
}

RunningTemperature::RunningTemperature(double train_max_logit_mean,
                                       double train_logit_sum,
                                       std::size_t classes)
    : train_max_(train_max_logit_mean), train_sum_(train_logit_sum),
      classes_(classes) {}

double RunningTemperature::update(const Matrix &batch_logits) {
  Vector maxes(batch_logits.rows()), sums(batch_logits.rows());
  for (std::size_t i = 0; i < batch_logits.rows(); ++i) {
    auto row = batch_logits.row(i);
    maxes[i] = *std::max_element(row.begin(), row.end());
    sums[i] = std::accumulate(row.begin(), row.end(), 0.0);
  }
  sum_ += temperature_for_batch(train_max_, train_sum_, maxes, sums, classes_).T;
  ++count_;
  return value();
}

double RunningTemperature::value() const noexcept {
  return count_ == 0 ? 1.0 : sum_ / static_cast<double>(count_);
}

} // namespace shiftlab
