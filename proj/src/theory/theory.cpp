// SPDX-License-Identifier: Apache-2.0
#include "shiftlab/theory.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

namespace shiftlab {

void ToyParams::validate() const {
  if (!(d > 0.0))
    throw std::invalid_argument("toy: d must be > 0");
  if (!(beta > 1.0))
    throw std::invalid_argument("toy: beta must be > 1");
  if (!(sigma > 0.0))
    throw std::invalid_argument("toy: sigma must be > 0");
  if (!(p >= 0.25 && p < 0.5))
    throw std::invalid_argument("toy: p must be in [1/4, 1/2)");
  if (delta.size() != 2)
    throw std::invalid_argument("toy: delta must have 2 entries");
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

namespace {

// The centering formulas and the quadrant product are smooth in p, so the
// finite difference for #3 may step just outside the prior range.
Matrix centered_means(const ToyParams &params) {
  const double a = 1.5 - 2.0 * params.p;  // component on the positive side
  const double b = -0.5 - 2.0 * params.p; // component on the negative side
  const double d = params.d, bd = params.beta * params.d;
  return Matrix{{a * d, a * bd}, {b * d, a * bd}, {a * d, b * bd}, {b * d, b * bd}};
}

Matrix quadrant_table(const ToyParams &params, const NormalCdf &cdf) {
  const Matrix mu = centered_means(params);
  const double s = params.sigma;
  Matrix table(4, 4);
  for (std::size_t i = 0; i < 4; ++i) {
    const double pos1 = cdf(mu(i, 0) / s), neg1 = cdf(-mu(i, 0) / s);
    const double pos2 = cdf(mu(i, 1) / s), neg2 = cdf(-mu(i, 1) / s);
    table(i, 0) = pos1 * pos2;
    table(i, 1) = neg1 * pos2;
    table(i, 2) = pos1 * neg2;
    table(i, 3) = neg1 * neg2;
  }
  return table;
}

} // namespace

Matrix shifted_means(const ToyParams &params) {
  params.validate();
  return centered_means(params);
}

int quadrant_class(double x1, double x2) noexcept {
  return (x1 >= 0.0 ? 0 : 1) + (x2 >= 0.0 ? 0 : 2);
}

Matrix closed_form_confusion(const ToyParams &params, const NormalCdf &cdf) {
  params.validate();
  return quadrant_table(params, cdf);
}

namespace {

Matrix raw_means(const ToyParams &params) {
  const double d = params.d, bd = params.beta * params.d;
  return Matrix{{d, bd}, {-d, bd}, {d, -bd}, {-d, -bd}};
}

} // namespace

Matrix monte_carlo_confusion(const ToyParams &params, std::size_t n_per_class,
                             std::uint64_t seed) {
  params.validate();
  if (n_per_class == 0)
    throw std::invalid_argument("monte carlo: n must be positive");
  const Matrix mu = raw_means(params);
  const Vector q = params.priors();
  double center[2] = {params.delta[0], params.delta[1]};
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t c = 0; c < 2; ++c)
      center[c] += q[i] * mu(i, c);

  Matrix table(4, 4);
  std::normal_distribution<double> noise(0.0, params.sigma);
  for (std::size_t i = 0; i < 4; ++i) {
    Rng rng = make_rng(seed, i);
    const double m1 = mu(i, 0) + params.delta[0] - center[0];
    const double m2 = mu(i, 1) + params.delta[1] - center[1];
    std::size_t counts[4] = {0, 0, 0, 0};
    for (std::size_t n = 0; n < n_per_class; ++n) {
      const double x1 = m1 + noise(rng);
      const double x2 = m2 + noise(rng);
      ++counts[quadrant_class(x1, x2)];
    }
    for (std::size_t j = 0; j < 4; ++j)
      table(i, j) =
          static_cast<double>(counts[j]) / static_cast<double>(n_per_class);
  }
  return table;
}

Matrix monte_carlo_confusion_sample_mean(const ToyParams &params,
                                         std::size_t n, std::uint64_t seed) {
  params.validate();
  const Matrix mu = raw_means(params);
  const Vector q = params.priors();
  Rng rng = make_rng(seed, 99);
  std::discrete_distribution<int> label(q.begin(), q.end());
  std::normal_distribution<double> noise(0.0, params.sigma);
  std::vector<int> y(n);
  std::vector<double> x(2 * n);
  double mean[2] = {0.0, 0.0};
  for (std::size_t k = 0; k < n; ++k) {
    y[k] = label(rng);
    for (std::size_t c = 0; c < 2; ++c) {
      x[2 * k + c] = mu(y[k], c) + params.delta[c] + noise(rng);
      mean[c] += x[2 * k + c];
    }
  }
  mean[0] /= static_cast<double>(n);
  mean[1] /= static_cast<double>(n);
  Matrix table(4, 4);
  std::vector<double> per_class(4, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    table(y[k], quadrant_class(x[2 * k] - mean[0], x[2 * k + 1] - mean[1])) += 1;
    per_class[y[k]] += 1;
  }
  for (std::size_t i = 0; i < 4; ++i)
    if (per_class[i] > 0)
      for (double &v : table.row(i))
        v /= per_class[i];
  return table;
}

double toy_accuracy(const ToyParams &params) {
  const Matrix t = closed_form_confusion(params);
  const Vector q = params.priors();
  double acc = 0.0;
  for (std::size_t i = 0; i < 4; ++i)
    acc += q[i] * t(i, i);
  return acc;
}

PropertyReport verify_properties(const PropertyGrid &grid,
                                 const NormalCdf &cdf) {
  constexpr double h = 1e-6;
  PropertyReport report;
  report.p3_checked = 2.0 * grid.sigma < grid.d;
  auto fmt = [](double a, double b) {
    std::ostringstream os;
    os.precision(17);
    os << a << " vs " << b;
    return os.str();
  };
  for (double beta : grid.beta) {
    for (double p : grid.p) {
      ToyParams tp{grid.d, beta, grid.sigma, p, {0.0, 0.0}};
      const Matrix t = closed_form_confusion(tp, cdf);
      ++report.points;
      auto fail = [&](const char *prop, std::string detail) {
        report.violations.push_back({prop, p, beta, std::move(detail)});
      };
      if (p > 0.25) {
        ++report.strict_points;
        for (std::size_t i = 1; i < 4; ++i)
          if (!(t(0, i) > t(i, 0)))
            fail("#1", "Pr[1->" + std::to_string(i + 1) + "] <= Pr[" +
                           std::to_string(i + 1) + "->1]: " +
                           fmt(t(0, i), t(i, 0)));
      }
      if (!(t(0, 1) > t(0, 2)))
        fail("#2", "Pr[1->2] <= Pr[1->3]: " + fmt(t(0, 1), t(0, 2)));
      if (!(t(0, 2) > t(0, 3)))
        fail("#2", "Pr[1->3] <= Pr[1->4]: " + fmt(t(0, 2), t(0, 3)));
      if (report.p3_checked) {
        ToyParams lo = tp, hi = tp;
        lo.p -= h;
        hi.p += h;
        const Matrix tl = quadrant_table(lo, cdf);
        const Matrix th = quadrant_table(hi, cdf);
        const double d12 = (th(0, 1) - tl(0, 1)) / (2 * h);
        const double d13 = (th(0, 2) - tl(0, 2)) / (2 * h);
        if (!(d12 > d13))
          fail("#3", "dPr[1->2]/dp <= dPr[1->3]/dp: " + fmt(d12, d13));
      }
    }
  }
  return report;
}

Json property_report_to_json(const PropertyGrid &grid,
                             const PropertyReport &report) {
  Json violations = Json::array();
  for (const auto &v : report.violations)
    violations.push_back({{"property", v.property},
                          {"p", v.p},
                          {"beta", v.beta},
                          {"detail", v.detail}});
  return {{"grid",
           {{"p", grid.p}, {"beta", grid.beta}, {"d", grid.d},
            {"sigma", grid.sigma}}},
          {"points", report.points},
          {"strict_points", report.strict_points},
          {"property3_checked", report.p3_checked},
          {"violations", violations}};
}

void CentroidModel::validate() const {
  const std::size_t k = mu.rows();
  if (k < 2 || mu.cols() < 1)
    throw std::invalid_argument("centroid model: need K >= 2 and D >= 1");
  for (const Vector *v : {&p_train, &q_test}) {
    if (v->size() != k)
      throw std::invalid_argument("centroid model: prior length != K");
    double s = 0.0;
    for (double x : *v) {
      if (!(x >= 0.0))
        throw std::invalid_argument("centroid model: negative prior");
      s += x;
    }
    if (std::abs(s - 1.0) > 1e-10)
      throw std::invalid_argument("centroid model: prior does not sum to 1");
  }
}

CentroidModel random_centroid_model(std::size_t classes, std::size_t dim,
                                    Rng &rng) {
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif(0.05, 1.0);
  CentroidModel m;
  m.mu = Matrix(classes, dim);
  for (double &v : m.mu.data())
    v = normal(rng);
  for (Vector *v : {&m.p_train, &m.q_test}) {
    v->resize(classes);
    double s = 0.0;
    for (double &x : *v)
      s += (x = unif(rng));
    for (double &x : *v)
      x /= s;
  }
  return m;
}

namespace {

// (I - 1 p) mu: each centroid minus the p-weighted mean centroid.
Matrix centered(const Matrix &mu, const Vector &p) {
  Matrix out = mu;
  for (std::size_t c = 0; c < mu.cols(); ++c) {
    double mean = 0.0;
    for (std::size_t k = 0; k < mu.rows(); ++k)
      mean += p[k] * mu(k, c);
    for (std::size_t k = 0; k < mu.rows(); ++k)
      out(k, c) -= mean;
  }
  return out;
}

using EigenMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

} // namespace

Matrix optimal_refinement(const CentroidModel &model) {
  model.validate();
  const std::size_t k = model.classes();
  const Matrix cp = centered(model.mu, model.p_train);
  const Matrix cq = centered(model.mu, model.q_test);
  const Vector &p = model.p_train;
  const double pn = norm2(p);

  EigenMat lhs(k, k), rhs(k, k);
  const Matrix g = matmul_nt(cp, cp);
  const Matrix r = matmul_nt(cp, cq);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      const double uu = p[i] * p[j] / (pn * pn);
      lhs(i, j) = g(i, j) + uu;
      rhs(i, j) = r(i, j) + uu;
    }
  const Eigen::SelfAdjointEigenSolver<EigenMat> eig(lhs,
                                                     Eigen::EigenvaluesOnly);
  const auto &ev = eig.eigenvalues();
  const double cond = ev.minCoeff() > 0.0
                          ? ev.maxCoeff() / ev.minCoeff()
                          : std::numeric_limits<double>::infinity();
  if (!(cond < 1e10))
    throw IllConditionedError(cond);
  const EigenMat w = lhs.ldlt().solve(rhs);
  Matrix out(k, k);
  Eigen::Map<EigenMat>(out.data().data(), k, k) = w;
  return out;
}

namespace {

// Householder QR least squares for a tall full-column-rank A (m x n) with
// several right-hand sides B (m x r). Both are overwritten.
Matrix householder_solve(Matrix a, Matrix b) {
  const std::size_t m = a.rows(), n = a.cols(), r = b.cols();
  if (m < n)
    throw std::invalid_argument("qr: system is underdetermined");
  for (std::size_t j = 0; j < n; ++j) {
    double norm = 0.0;
    for (std::size_t i = j; i < m; ++i)
      norm += a(i, j) * a(i, j);
    norm = std::sqrt(norm);
    if (norm == 0.0)
      throw std::runtime_error("qr: rank deficient");
    const double alpha = a(j, j) > 0 ? -norm : norm;
    Vector v(m - j);
    for (std::size_t i = j; i < m; ++i)
      v[i - j] = a(i, j);
    v[0] -= alpha;
    const double vv = std::inner_product(v.begin(), v.end(), v.begin(), 0.0);
    auto reflect = [&](Matrix &x, std::size_t col) {
      double s = 0.0;
      for (std::size_t i = j; i < m; ++i)
        s += v[i - j] * x(i, col);
      s = 2.0 * s / vv;
      for (std::size_t i = j; i < m; ++i)
        x(i, col) -= s * v[i - j];
    };
    for (std::size_t c = j; c < n; ++c)
      reflect(a, c);
    for (std::size_t c = 0; c < r; ++c)
      reflect(b, c);
  }
  Matrix x(n, r);
  for (std::size_t c = 0; c < r; ++c)
    for (std::size_t i = n; i-- > 0;) {
      double s = b(i, c);
      for (std::size_t t = i + 1; t < n; ++t)
        s -= a(i, t) * x(t, c);
      x(i, c) = s / a(i, i);
    }
  return x;
}

} // namespace

Matrix least_squares_refinement_oracle(const CentroidModel &model) {
  model.validate();
  const std::size_t k = model.classes(), dim = model.mu.cols();
  const Matrix at = transpose(centered(model.mu, model.p_train)); // D x K
  const Matrix bt = transpose(centered(model.mu, model.q_test));
  const double pn = norm2(model.p_train);
  const double c = frobenius_norm(at) / std::sqrt(static_cast<double>(k));

  Matrix a(dim + 1, k), b(dim + 1, k);
  for (std::size_t i = 0; i < dim; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      a(i, j) = at(i, j);
      b(i, j) = bt(i, j);
    }
  for (std::size_t j = 0; j < k; ++j) {
    a(dim, j) = c * model.p_train[j] / pn;
    b(dim, j) = a(dim, j);
  }
  return householder_solve(std::move(a), std::move(b));
}

} // namespace shiftlab
