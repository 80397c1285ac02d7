// SPDX-License-Identifier: Apache-2.0
#include "shiftlab/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "shiftlab/rng.hpp"

namespace shiftlab {

void GaussianMixtureSpec::validate() const {
  if (classes < 2)
    throw std::invalid_argument("mixture: need at least 2 classes");
  if (dim < 1)
    throw std::invalid_argument("mixture: dim must be >= 1");
  if (means.rows() != classes || means.cols() != dim)
    throw std::invalid_argument("mixture: means must be classes x dim");
  if (!(sigma > 0.0))
    throw std::invalid_argument("mixture: sigma must be > 0");
  if (covariate_shift.size() != dim)
    throw std::invalid_argument("mixture: covariate_shift length != dim");
  if (priors.size() != classes)
    throw std::invalid_argument("mixture: priors length != classes");
  double s = 0.0;
  for (double p : priors) {
    if (!(p >= 0.0))
      throw std::invalid_argument("mixture: negative prior");
    s += p;
  }
  if (std::abs(s - 1.0) > 1e-12)
    throw std::invalid_argument("mixture: priors must sum to 1");
}

std::vector<std::size_t> LabeledDataset::class_counts() const {
  std::vector<std::size_t> c(classes, 0);
  for (int y : labels)
    ++c[static_cast<std::size_t>(y)];
  return c;
}

void LabeledDataset::validate() const {
  if (labels.empty())
    throw std::invalid_argument("dataset: empty");
  if (features.rows() != labels.size())
    throw std::invalid_argument("dataset: feature rows != label count");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= classes)
      throw std::invalid_argument("dataset: label out of range");
}

std::size_t BatchStream::total_samples() const noexcept {
  std::size_t n = 0;
  for (const auto &b : batches)
    n += b.labels.size();
  return n;
}

namespace {

void fill_sample(const GaussianMixtureSpec &spec, std::size_t label,
                 std::span<double> row, Rng &rng,
                 std::normal_distribution<double> &noise) {
  for (std::size_t j = 0; j < spec.dim; ++j)
    row[j] = spec.means(label, j) + spec.covariate_shift[j] +
             spec.sigma * noise(rng);
}

// Log of a Gamma(shape, 1) draw. For shape < 1 uses
// Gamma(a) = Gamma(a + 1) * U^(1/a) so tiny shapes stay representable.
double log_gamma_draw(double shape, Rng &rng) {
  if (shape >= 1.0) {
    std::gamma_distribution<double> g(shape, 1.0);
    double v = g(rng);
    while (v <= 0.0)
      v = g(rng);
    return std::log(v);
  }
  std::gamma_distribution<double> g(shape + 1.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double base = g(rng);
  while (base <= 0.0)
    base = g(rng);
  double uu = u(rng);
  while (uu <= 0.0)
    uu = u(rng);
  return std::log(base) + std::log(uu) / shape;
}

std::vector<double> dirichlet_draw(double concentration, std::size_t n,
                                   Rng &rng) {
  std::vector<double> logs(n);
  for (auto &l : logs)
    l = log_gamma_draw(concentration, rng);
  const double mx = *std::max_element(logs.begin(), logs.end());
  double sum = 0.0;
  for (auto &l : logs) {
    l = std::exp(l - mx);
    sum += l;
  }
  for (auto &l : logs)
    l /= sum;
  return logs;
}

// Integer split of `total` proportional to `weights` (sums to total).
std::vector<std::size_t> largest_remainder(std::size_t total,
                                           const std::vector<double> &weights) {
  std::vector<std::size_t> out(weights.size());
  std::vector<std::pair<double, std::size_t>> rema;
  rema.reserve(weights.size());
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = static_cast<double>(total) * weights[i];
    out[i] = static_cast<std::size_t>(std::floor(exact));
    assigned += out[i];
    rema.emplace_back(exact - static_cast<double>(out[i]), i);
  }
  // Stable ordering: larger remainder first, lower index breaks ties.
  std::sort(rema.begin(), rema.end(), [](const auto &a, const auto &b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  for (std::size_t r = 0; assigned < total; ++r, ++assigned)
    out[rema[r % rema.size()].second] += 1;
  return out;
}

std::vector<std::vector<std::size_t>> class_pools(const LabeledDataset &data) {
  std::vector<std::vector<std::size_t>> pools(data.classes);
  for (std::size_t i = 0; i < data.size(); ++i)
    pools[static_cast<std::size_t>(data.labels[i])].push_back(i);
  return pools;
}

} // namespace

LabeledDataset sample_mixture(const GaussianMixtureSpec &spec, std::size_t n,
                              std::uint64_t seed) {
  spec.validate();
  if (n < 1)
    throw std::invalid_argument("sample_mixture: n must be >= 1");
  Rng rng = make_rng(seed, 0x5a);
  std::discrete_distribution<int> label_dist(spec.priors.begin(),
                                             spec.priors.end());
  std::normal_distribution<double> noise(0.0, 1.0);
  LabeledDataset out;
  out.classes = spec.classes;
  out.features = Matrix(n, spec.dim);
  out.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = label_dist(rng);
    out.labels[i] = y;
    fill_sample(spec, static_cast<std::size_t>(y), out.features.row(i), rng,
                noise);
  }
  return out;
}

LabeledDataset sample_class_counts(const GaussianMixtureSpec &spec,
                                   const std::vector<std::size_t> &counts,
                                   std::uint64_t seed) {
  spec.validate();
  if (counts.size() != spec.classes)
    throw std::invalid_argument("sample_class_counts: counts length != K");
  const std::size_t n = std::accumulate(counts.begin(), counts.end(),
                                        std::size_t{0});
  if (n < 1)
    throw std::invalid_argument("sample_class_counts: zero samples");
  Rng rng = make_rng(seed, 0x5b);
  std::normal_distribution<double> noise(0.0, 1.0);
  LabeledDataset out;
  out.classes = spec.classes;
  out.features = Matrix(n, spec.dim);
  out.labels.reserve(n);
  std::size_t row = 0;
  for (std::size_t k = 0; k < counts.size(); ++k)
    for (std::size_t c = 0; c < counts[k]; ++c, ++row) {
      out.labels.push_back(static_cast<int>(k));
      fill_sample(spec, k, out.features.row(row), rng, noise);
    }
  return out;
}

GaussianMixtureSpec toy_spec(double d, double beta, double sigma, double p,
                             const Vector &delta) {
  if (!(beta > 1.0))
    throw std::invalid_argument("toy_spec: beta must be > 1");
  if (!(p >= 0.25 && p < 0.5))
    throw std::invalid_argument("toy_spec: p must be in [1/4, 1/2)");
  if (!(d > 0.0) || !(sigma > 0.0))
    throw std::invalid_argument("toy_spec: d and sigma must be > 0");
  if (delta.size() != 2)
    throw std::invalid_argument("toy_spec: delta must have 2 entries");
  GaussianMixtureSpec s;
  s.classes = 4;
  s.dim = 2;
  s.means = Matrix{{d, beta * d}, {-d, beta * d}, {d, -beta * d},
                   {-d, -beta * d}};
  s.sigma = sigma;
  s.covariate_shift = delta;
  s.priors = {p, 0.25, 0.25, 0.5 - p};
  return s;
}

GaussianMixtureSpec paired_benchmark_spec(std::size_t classes, std::size_t dim,
                                          double sigma, double separation,
                                          double spread) {
  const std::size_t pairs = classes / 2;
  const std::size_t axes_needed = 2 * pairs + (classes % 2);
  if (classes < 2 || dim < axes_needed)
    throw std::invalid_argument("paired benchmark needs dim >= " +
                                std::to_string(axes_needed));
  GaussianMixtureSpec s;
  s.classes = classes;
  s.dim = dim;
  s.means = Matrix(classes, dim);
  for (std::size_t j = 0; j < pairs; ++j) {
    // Classes j and j + pairs share a center and differ along one axis.
    const std::size_t a = j, b = j + pairs;
    s.means(a, j) = separation;
    s.means(b, j) = separation;
    s.means(a, pairs + j) = spread;
    s.means(b, pairs + j) = -spread;
  }
  if (classes % 2 == 1)
    s.means(classes - 1, 2 * pairs) = separation;
  s.sigma = sigma;
  s.covariate_shift.assign(dim, 0.0);
  s.priors.assign(classes, 1.0 / static_cast<double>(classes));
  return s;
}

std::vector<std::size_t> long_tail_counts(std::size_t n, double rho,
                                          std::size_t classes, bool inverse) {
  if (!(rho >= 1.0))
    throw std::invalid_argument("long_tail_counts: rho must be >= 1");
  if (classes < 2)
    throw std::invalid_argument("long_tail_counts: need K >= 2");
  std::vector<std::size_t> counts(classes);
  const double km1 = static_cast<double>(classes - 1);
  for (std::size_t k = 0; k < classes; ++k) {
    const double e =
        static_cast<double>(inverse ? classes - 1 - k : k) / km1;
    const double v = std::round(static_cast<double>(n) * std::pow(1.0 / rho, e));
    counts[k] = std::max<std::size_t>(1, static_cast<std::size_t>(v));
  }
  return counts;
}

double online_imbalance_pmax(double ir, std::size_t classes) {
  if (!(ir >= 1.0))
    throw std::invalid_argument("online imbalance: IR must be >= 1");
  const double km1 = static_cast<double>(classes - 1);
  return ir / (ir + km1);
}

BatchStream stream_from_order(const LabeledDataset &data,
                              const std::vector<std::size_t> &order,
                              std::size_t batch_size) {
  if (batch_size < 1)
    throw std::invalid_argument("batch_size must be >= 1");
  BatchStream s;
  s.classes = data.classes;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    Batch b;
    std::span<const std::size_t> idx(order.data() + start, end - start);
    b.features = gather_rows(data.features, idx);
    b.histogram.assign(data.classes, 0);
    for (std::size_t i : idx) {
      b.labels.push_back(data.labels[i]);
      ++b.histogram[static_cast<std::size_t>(data.labels[i])];
    }
    s.batches.push_back(std::move(b));
  }
  return s;
}

BatchStream iid_stream(const LabeledDataset &data, std::size_t batch_size,
                       std::uint64_t seed) {
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = make_rng(seed, 0x1d);
  std::shuffle(order.begin(), order.end(), rng);
  return stream_from_order(data, order, batch_size);
}

BatchStream online_imbalanced_stream(const LabeledDataset &data, double ir,
                                     std::size_t subset_size,
                                     std::size_t batch_size,
                                     std::uint64_t seed) {
  if (subset_size < 1)
    throw std::invalid_argument("online_imbalanced_stream: subset_size < 1");
  data.validate();
  const std::size_t K = data.classes;
  const double pmax = online_imbalance_pmax(ir, K);
  const double pmin = (1.0 - pmax) / static_cast<double>(K - 1);

  Rng rng = make_rng(seed, 0x0b);
  auto pools = class_pools(data);
  for (auto &p : pools) {
    if (p.empty())
      throw std::invalid_argument("online_imbalanced_stream: empty class pool");
    std::shuffle(p.begin(), p.end(), rng);
  }
  std::vector<std::size_t> cursor(K, 0);
  bool resampled = false;

  std::vector<std::vector<std::size_t>> subsets(K);
  for (std::size_t k = 0; k < K; ++k) {
    std::vector<double> w(K, pmin);
    w[k] = pmax;
    std::discrete_distribution<std::size_t> label_dist(w.begin(), w.end());
    for (std::size_t i = 0; i < subset_size; ++i) {
      const std::size_t y = label_dist(rng);
      auto &pool = pools[y];
      if (cursor[y] < pool.size()) {
        subsets[k].push_back(pool[cursor[y]++]);
      } else {
        resampled = true;
        std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
        subsets[k].push_back(pool[pick(rng)]);
      }
    }
  }
  std::shuffle(subsets.begin(), subsets.end(), rng);

  std::vector<std::size_t> order;
  order.reserve(K * subset_size);
  for (const auto &s : subsets)
    order.insert(order.end(), s.begin(), s.end());
  BatchStream out = stream_from_order(data, order, batch_size);
  out.resampled = resampled;
  return out;
}

BatchStream dirichlet_stream(const LabeledDataset &data, double delta,
                             std::size_t n_chunks, std::size_t batch_size,
                             std::uint64_t seed) {
  if (!(delta > 0.0))
    throw std::invalid_argument("dirichlet_stream: delta must be > 0");
  if (n_chunks < 1)
    throw std::invalid_argument("dirichlet_stream: n_chunks must be >= 1");
  data.validate();
  Rng rng = make_rng(seed, 0xd1);
  auto pools = class_pools(data);
  std::vector<std::vector<std::size_t>> chunks(n_chunks);
  for (auto &pool : pools) {
    std::shuffle(pool.begin(), pool.end(), rng);
    const auto props = dirichlet_draw(delta, n_chunks, rng);
    const auto counts = largest_remainder(pool.size(), props);
    std::size_t pos = 0;
    for (std::size_t c = 0; c < n_chunks; ++c)
      for (std::size_t i = 0; i < counts[c]; ++i)
        chunks[c].push_back(pool[pos++]);
  }
  std::vector<std::size_t> order;
  order.reserve(data.size());
  for (auto &chunk : chunks) {
    std::shuffle(chunk.begin(), chunk.end(), rng);
    order.insert(order.end(), chunk.begin(), chunk.end());
  }
  return stream_from_order(data, order, batch_size);
}

LabeledDataset subset_rows(const LabeledDataset &data,
                           const std::vector<std::size_t> &rows) {
  LabeledDataset out;
  out.classes = data.classes;
  out.features = gather_rows(data.features, rows);
  out.labels.reserve(rows.size());
  for (std::size_t r : rows)
    out.labels.push_back(data.labels[r]);
  return out;
}

LabeledDataset balanced_subset(const LabeledDataset &data,
                               std::size_t per_class, std::uint64_t seed) {
  data.validate();
  auto pools = class_pools(data);
  for (std::size_t k = 0; k < pools.size(); ++k)
    if (pools[k].size() < per_class)
      throw std::invalid_argument(
          "balanced_subset: class " + std::to_string(k) + " has " +
          std::to_string(pools[k].size()) + " samples, need " +
          std::to_string(per_class));
  Rng rng = make_rng(seed, 0xba);
  std::vector<std::size_t> rows;
  rows.reserve(per_class * pools.size());
  for (auto &pool : pools) {
    std::shuffle(pool.begin(), pool.end(), rng);
    rows.insert(rows.end(), pool.begin(), pool.begin() + static_cast<long>(per_class));
  }
  return subset_rows(data, rows);
}

LabeledDataset shifted(const LabeledDataset &data, const Vector &shift) {
  if (shift.size() != data.features.cols())
    throw ShapeError("shifted: shift length != feature dim");
  LabeledDataset out = data;
  add_row_vector(out.features, shift);
  return out;
}

} // namespace shiftlab
