// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "shiftlab/matrix.hpp"
#include "shiftlab/rng.hpp"
#include "shiftlab/serialize.hpp"

namespace shiftlab {

/// Four classes at (+-d, +-beta d) with isotropic noise sigma; test priors
/// [p, 1/4, 1/4, 1/2 - p] and an additive covariate shift delta.
struct ToyParams {
  double d = 1.0;
  double beta = 2.0;
  double sigma = 0.5;
  double p = 0.25;
  Vector delta{0.0, 0.0};

  void validate() const;
  Vector priors() const { return {p, 0.25, 0.25, 0.5 - p}; }
};

using NormalCdf = std::function<double(double)>;

/// Standard normal CDF.
double normal_cdf(double x);

/// Class means after centering with the test population mean.
Matrix shifted_means(const ToyParams &params);

/// Quadrant classifier: 0 for (+,+), 1 for (-,+), 2 for (+,-), 3 for (-,-).
/// Zero counts as positive.
int quadrant_class(double x1, double x2) noexcept;

/// 4x4 table, entry (i, j) = Pr[quadrant class j | true class i] after
/// mean centering. `cdf` can be swapped for fault injection.
Matrix closed_form_confusion(const ToyParams &params,
                             const NormalCdf &cdf = normal_cdf);

/// Monte-Carlo estimate with `n_per_class` draws of each class, centered
/// by the exact population mean.
Matrix monte_carlo_confusion(const ToyParams &params, std::size_t n_per_class,
                             std::uint64_t seed);

/// Variant drawing `n` labels from the priors and centering by the sample
/// mean of the drawn features.
Matrix monte_carlo_confusion_sample_mean(const ToyParams &params,
                                         std::size_t n, std::uint64_t seed);

/// Accuracy of the quadrant classifier under the test priors.
double toy_accuracy(const ToyParams &params);

struct PropertyGrid {
  std::vector<double> p{0.30, 0.35, 0.40, 0.45};
  std::vector<double> beta{1.5, 2.0, 3.0};
  double d = 1.0;
  double sigma = 0.4;
};

struct PropertyViolation {
  std::string property; // "#1", "#2" or "#3"
  double p = 0;
  double beta = 0;
  std::string detail;
};

struct PropertyReport {
  std::size_t points = 0;
  std::size_t strict_points = 0; // p > 1/4, where #1 is checked
  bool p3_checked = false;       // false when 2 sigma >= d
  std::vector<PropertyViolation> violations;

  bool ok() const noexcept { return violations.empty(); }
};

/// Checks over the grid:
///  #1 Pr[1->i] > Pr[i->1] for i != 1 (p = 1/4 excluded)
///  #2 Pr[1->2] > Pr[1->3] > Pr[1->4]
///  #3 d/dp Pr[1->2] > d/dp Pr[1->3] (central difference, h = 1e-6),
///     only when 2 sigma < d
PropertyReport verify_properties(const PropertyGrid &grid,
                                 const NormalCdf &cdf = normal_cdf);

Json property_report_to_json(const PropertyGrid &grid,
                             const PropertyReport &report);

/// Class centroids with training and test priors.
struct CentroidModel {
  Matrix mu; // K x D
  Vector p_train;
  Vector q_test;

  std::size_t classes() const noexcept { return mu.rows(); }
  void validate() const;
};

/// Centroids ~ N(0, I) and priors from normalized U(0.05, 1) draws.
CentroidModel random_centroid_model(std::size_t classes, std::size_t dim,
                                    Rng &rng);

class IllConditionedError : public std::runtime_error {
public:
  IllConditionedError(double cond)
      : std::runtime_error("refinement Gram is ill-conditioned (cond = " +
                           std::to_string(cond) + ")"),
        cond_(cond) {}
  double condition_number() const noexcept { return cond_; }

private:
  double cond_;
};

/// Least-squares W minimizing |mu^T (I - 1q)^T - mu^T (I - 1p)^T W|_F.
/// The Gram (I-1p) mu mu^T (I-1p)^T always has p in its null space, so
/// the solution fixes that direction to the identity:
///   W* = (G + u u^T)^{-1} (R + u u^T),  u = p / |p|.
/// Throws IllConditionedError when cond(G + u u^T) >= 1e10.
Matrix optimal_refinement(const CentroidModel &model);

/// The same minimizer from a Householder QR solve of the stacked system
/// [A; c u^T] W = [B; c u^T].
Matrix least_squares_refinement_oracle(const CentroidModel &model);

} // namespace shiftlab
