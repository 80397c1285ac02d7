// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "shiftlab/matrix.hpp"

namespace shiftlab {

/// K isotropic Gaussian classes N(mean_k + covariate_shift, sigma^2 I).
struct GaussianMixtureSpec {
  std::size_t classes = 0;
  std::size_t dim = 0;
  Matrix means;          // classes x dim
  double sigma = 1.0;
  Vector covariate_shift; // dim
  Vector priors;          // simplex over classes

  /// Throws std::invalid_argument naming the first violated invariant.
  void validate() const;
};

struct LabeledDataset {
  Matrix features; // N x D
  std::vector<int> labels;
  std::size_t classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
  std::vector<std::size_t> class_counts() const;
  void validate() const;
};

struct Batch {
  Matrix features;
  std::vector<int> labels;
  std::vector<std::size_t> histogram;
};

struct BatchStream {
  std::vector<Batch> batches;
  std::size_t classes = 0;
  /// Set when a class pool ran dry and samples were drawn with replacement.
  bool resampled = false;

  std::size_t total_samples() const noexcept;
};

/// Labels from the priors, features from N(mean_y + shift, sigma^2 I).
LabeledDataset sample_mixture(const GaussianMixtureSpec &spec, std::size_t n,
                              std::uint64_t seed);

/// Exactly counts[k] samples of class k, in class order.
LabeledDataset sample_class_counts(const GaussianMixtureSpec &spec,
                                   const std::vector<std::size_t> &counts,
                                   std::uint64_t seed);

/// Four classes at (+-d, +-beta d), test priors [p, 1/4, 1/4, 1/2 - p].
GaussianMixtureSpec toy_spec(double d, double beta, double sigma, double p,
                             const Vector &delta);

/// K classes in D dimensions grouped in confusable pairs: pair j sits at
/// `separation * e_j` and its members are offset by +-`spread * e_{P+j}`
/// (P = number of pairs). An odd last class sits alone on its own axis.
GaussianMixtureSpec paired_benchmark_spec(std::size_t classes, std::size_t dim,
                                          double sigma, double separation,
                                          double spread);

/// n_k = round(n * (1/rho)^(k/(K-1))), floor 1; `inverse` mirrors k.
std::vector<std::size_t> long_tail_counts(std::size_t n, double rho,
                                          std::size_t classes, bool inverse);

/// p_max such that p_max / ((1 - p_max)/(K-1)) = ir.
double online_imbalance_pmax(double ir, std::size_t classes);

/// Shuffles and cuts into batches of batch_size (last may be short).
BatchStream iid_stream(const LabeledDataset &data, std::size_t batch_size,
                       std::uint64_t seed);

/// Batches in the given sample order.
BatchStream stream_from_order(const LabeledDataset &data,
                              const std::vector<std::size_t> &order,
                              std::size_t batch_size);

/// K subsets of subset_size samples; subset k has class k at p_max and the
/// rest at p_min. Labels are drawn i.i.d. from that distribution and filled
/// from per-class pools (with replacement once a pool is exhausted). Subset
/// order is shuffled before batching.
BatchStream online_imbalanced_stream(const LabeledDataset &data, double ir,
                                     std::size_t subset_size,
                                     std::size_t batch_size,
                                     std::uint64_t seed);

/// Per class, chunk proportions ~ Dirichlet(delta * 1_{n_chunks}); the
/// class's samples are split over chunks by largest-remainder rounding.
/// Chunks are concatenated in order and cut into batches.
BatchStream dirichlet_stream(const LabeledDataset &data, double delta,
                             std::size_t n_chunks, std::size_t batch_size,
                             std::uint64_t seed);

/// Exactly per_class samples of every class, chosen uniformly.
LabeledDataset balanced_subset(const LabeledDataset &data,
                               std::size_t per_class, std::uint64_t seed);

/// Samples of the listed rows.
LabeledDataset subset_rows(const LabeledDataset &data,
                           const std::vector<std::size_t> &rows);

/// Adds `shift` to every feature row.
LabeledDataset shifted(const LabeledDataset &data, const Vector &shift);

} // namespace shiftlab
