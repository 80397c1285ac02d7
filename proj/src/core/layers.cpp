// SPDX-License-Identifier: Apache-2.0
#include "shiftlab/layers.hpp"

#include <cmath>
#include <stdexcept>

#include "shiftlab/kernels.hpp"

namespace shiftlab {

// ---- Linear ---------------------------------------------------------------

Linear::Linear(std::size_t in, std::size_t out)
    : weight(in, out), bias(out, 0.0), grad_weight(in, out),
      grad_bias(out, 0.0) {}

void Linear::init_uniform(Rng &rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_features()));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (double &w : weight.data())
    w = u(rng);
  for (double &b : bias)
    b = u(rng);
}

Matrix Linear::infer(const Matrix &x) const {
  Matrix y = matmul(x, weight);
  add_row_vector(y, bias);
  return y;
}

Matrix Linear::forward(const Matrix &x) {
  input_ = x;
  return infer(x);
}

Matrix Linear::backward(const Matrix &grad_out) {
  if (input_.rows() != grad_out.rows())
    throw ShapeError("linear backward: batch mismatch");
  Matrix gw = matmul_tn(input_, grad_out);
  kernels::axpy(1.0, gw.data().data(), grad_weight.data().data(), gw.size());
  Vector gb = column_sums(grad_out);
  kernels::axpy(1.0, gb.data(), grad_bias.data(), gb.size());
  return matmul_nt(grad_out, weight);
}

void Linear::zero_grad() {
  std::fill(grad_weight.data().begin(), grad_weight.data().end(), 0.0);
  std::fill(grad_bias.begin(), grad_bias.end(), 0.0);
}

void Linear::collect(std::vector<Param> &out, const std::string &prefix) {
  out.push_back({prefix + ".weight", weight.data(), grad_weight.data(), false});
  out.push_back({prefix + ".bias", bias, grad_bias, false});
}

// ---- BatchNorm ------------------------------------------------------------

BatchNorm::BatchNorm(std::size_t width, double momentum_, double epsilon_)
    : gamma(width, 1.0), beta(width, 0.0), running_mean(width, 0.0),
      running_var(width, 1.0), grad_gamma(width, 0.0), grad_beta(width, 0.0),
      momentum(momentum_), epsilon(epsilon_) {}

namespace {

void batch_moments(const Matrix &x, Vector &mean, Vector &var) {
  const std::size_t m = x.rows();
  const std::size_t w = x.cols();
  mean.assign(w, 0.0);
  var.assign(w, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    kernels::axpy(1.0, x.row(i).data(), mean.data(), w);
  for (double &v : mean)
    v /= static_cast<double>(m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      const double d = x(i, j) - mean[j];
      var[j] += d * d;
    }
  for (double &v : var)
    v /= static_cast<double>(m);
}

} // namespace

Matrix BatchNorm::infer(const Matrix &x, BnMode mode) const {
  if (x.cols() != width())
    throw ShapeError("batchnorm: width mismatch");
  if (mode == BnMode::train)
    throw std::logic_error("batchnorm: infer() cannot run in train mode");
  Vector mean, var;
  if (mode == BnMode::replace) {
    if (x.rows() == 0)
      throw ShapeError("batchnorm: empty batch");
    batch_moments(x, mean, var);
  } else {
    mean = running_mean;
    var = running_var;
  }
  Matrix y(x.rows(), x.cols());
  for (std::size_t j = 0; j < width(); ++j) {
    const double inv = 1.0 / std::sqrt(var[j] + epsilon);
    for (std::size_t i = 0; i < x.rows(); ++i)
      y(i, j) = gamma[j] * (x(i, j) - mean[j]) * inv + beta[j];
  }
  return y;
}

Matrix BatchNorm::forward(const Matrix &x) {
  if (!mode_)
    throw std::logic_error("batchnorm: mode not set");
  if (x.cols() != width())
    throw ShapeError("batchnorm: width mismatch");
  const BnMode mode = *mode_;
  Vector mean, var;
  batch_stats_ = mode != BnMode::eval;
  if (batch_stats_) {
    if (x.rows() == 0)
      throw ShapeError("batchnorm: empty batch");
    batch_moments(x, mean, var);
    if (mode == BnMode::train) {
      const double m = static_cast<double>(x.rows());
      const double unbias = x.rows() > 1 ? m / (m - 1.0) : 1.0;
      for (std::size_t j = 0; j < width(); ++j) {
        running_mean[j] = (1.0 - momentum) * running_mean[j] + momentum * mean[j];
        running_var[j] =
            (1.0 - momentum) * running_var[j] + momentum * var[j] * unbias;
      }
    }
  } else {
    mean = running_mean;
    var = running_var;
  }

  inv_std_.resize(width());
  xhat_ = Matrix(x.rows(), x.cols());
  Matrix y(x.rows(), x.cols());
  for (std::size_t j = 0; j < width(); ++j) {
    inv_std_[j] = 1.0 / std::sqrt(var[j] + epsilon);
    for (std::size_t i = 0; i < x.rows(); ++i) {
      const double xh = (x(i, j) - mean[j]) * inv_std_[j];
      xhat_(i, j) = xh;
      y(i, j) = gamma[j] * xh + beta[j];
    }
  }
  return y;
}

Matrix BatchNorm::backward(const Matrix &grad_out) {
  if (!grad_out.same_shape(xhat_))
    throw ShapeError("batchnorm backward: shape mismatch");
  const std::size_t m = grad_out.rows();
  Matrix dx(m, width());
  for (std::size_t j = 0; j < width(); ++j) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      sum_g += grad_out(i, j);
      sum_gx += grad_out(i, j) * xhat_(i, j);
    }
    grad_beta[j] += sum_g;
    grad_gamma[j] += sum_gx;
    const double scale = gamma[j] * inv_std_[j];
    if (batch_stats_) {
      // The batch mean and variance depend on every row.
      const double inv_m = 1.0 / static_cast<double>(m);
      for (std::size_t i = 0; i < m; ++i)
        dx(i, j) = scale * (grad_out(i, j) - inv_m * sum_g -
                            xhat_(i, j) * inv_m * sum_gx);
    } else {
      for (std::size_t i = 0; i < m; ++i)
        dx(i, j) = scale * grad_out(i, j);
    }
  }
  return dx;
}

void BatchNorm::zero_grad() {
  std::fill(grad_gamma.begin(), grad_gamma.end(), 0.0);
  std::fill(grad_beta.begin(), grad_beta.end(), 0.0);
}

void BatchNorm::collect(std::vector<Param> &out, const std::string &prefix) {
  out.push_back({prefix + ".gamma", gamma, grad_gamma, true});
  out.push_back({prefix + ".beta", beta, grad_beta, true});
}

// ---- Relu -----------------------------------------------------------------

Matrix Relu::infer(const Matrix &x) const {
  Matrix y = x;
  for (double &v : y.data())
    v = v > 0.0 ? v : 0.0;
  return y;
}

Matrix Relu::forward(const Matrix &x) {
  input_ = x;
  return infer(x);
}

Matrix Relu::backward(const Matrix &grad_out) const {
  if (!grad_out.same_shape(input_))
    throw ShapeError("relu backward: shape mismatch");
  Matrix dx = grad_out;
  auto in = input_.data();
  auto d = dx.data();
  for (std::size_t i = 0; i < d.size(); ++i)
    if (!(in[i] > 0.0))
      d[i] = 0.0;
  return dx;
}

// ---- Sequential -----------------------------------------------------------

template <class... Ts> struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts> Overloaded(Ts...) -> Overloaded<Ts...>;

void Sequential::set_bn_mode(BnMode mode) {
  for (auto &layer : layers_)
    if (auto *bn = std::get_if<BatchNorm>(&layer))
      bn->set_mode(mode);
}

Matrix Sequential::forward(const Matrix &x) {
  Matrix h = x;
  for (auto &layer : layers_)
    h = std::visit([&](auto &l) { return l.forward(h); }, layer);
  return h;
}

Matrix Sequential::infer(const Matrix &x, BnMode mode) const {
  Matrix h = x;
  for (const auto &layer : layers_)
    h = std::visit(Overloaded{
                       [&](const Linear &l) { return l.infer(h); },
                       [&](const BatchNorm &l) { return l.infer(h, mode); },
                       [&](const Relu &l) { return l.infer(h); },
                   },
                   layer);
  return h;
}

Matrix Sequential::backward(const Matrix &grad_out) {
  Matrix g = grad_out;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it)
    g = std::visit([&](auto &l) { return l.backward(g); }, *it);
  return g;
}

void Sequential::zero_grad() {
  for (auto &layer : layers_)
    std::visit(Overloaded{
                   [](Linear &l) { l.zero_grad(); },
                   [](BatchNorm &l) { l.zero_grad(); },
                   [](Relu &) {},
               },
               layer);
}

std::vector<Param> Sequential::params() {
  std::vector<Param> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const std::string prefix = "layer" + std::to_string(i);
    std::visit(Overloaded{
                   [&](Linear &l) { l.collect(out, prefix); },
                   [&](BatchNorm &l) { l.collect(out, prefix); },
                   [](Relu &) {},
               },
               layers_[i]);
  }
  return out;
}

std::vector<Vector> forward_backward(Sequential &net, const Matrix &input,
                                     const Matrix &loss_grad) {
  net.zero_grad();
  net.forward(input);
  net.backward(loss_grad);
  std::vector<Vector> grads;
  for (const auto &p : net.params())
    grads.emplace_back(p.grad.begin(), p.grad.end());
  return grads;
}

} // namespace shiftlab
