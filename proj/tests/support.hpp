// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <random>
#include <vector>

#include "shiftlab/adapt.hpp"
#include "shiftlab/datagen.hpp"
#include "shiftlab/layers.hpp"
#include "shiftlab/matrix.hpp"
#include "shiftlab/refiner.hpp"
#include "shiftlab/rng.hpp"

namespace testing {

using namespace shiftlab;

inline Matrix random_matrix(std::size_t r, std::size_t c, Rng &rng,
                            double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(r, c);
  for (double &v : m.data())
    v = n(rng);
  return m;
}

inline std::vector<int> random_labels(std::size_t n, std::size_t k, Rng &rng) {
  std::uniform_int_distribution<int> u(0, static_cast<int>(k) - 1);
  std::vector<int> y(n);
  for (int &v : y)
    v = u(rng);
  return y;
}

/// |a - n| / max(|a|, |n|, 1e-6)
inline double rel_err(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6});
}

/// Largest relative error between `analytic` and five-point central
/// differences of `loss` over every entry of `params`.
inline double max_fd_error(std::vector<Param> params,
                           const std::vector<Vector> &analytic,
                           const std::function<double()> &loss,
                           double h = 1e-4) {
  double worst = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p)
    for (std::size_t i = 0; i < params[p].value.size(); ++i) {
      double &x = params[p].value[i];
      const double keep = x;
      auto at = [&](double step) {
        x = keep + step;
        return loss();
      };
      const double fd =
          (at(-2 * h) - 8 * at(-h) + 8 * at(h) - at(2 * h)) / (12 * h);
      x = keep;
      worst = std::max(worst, rel_err(analytic[p][i], fd));
    }
  return worst;
}

inline std::vector<Vector> grads_of(const std::vector<Param> &params) {
  std::vector<Vector> out;
  for (const Param &p : params)
    out.emplace_back(p.grad.begin(), p.grad.end());
  return out;
}

/// Four-class toy classifier trained on balanced data.
inline MlpClassifier toy_classifier(double sigma, std::uint64_t seed,
                                    std::size_t epochs = 10) {
  const auto spec = toy_spec(1.0, 2.0, sigma, 0.25, {0.0, 0.0});
  const auto train = sample_mixture(spec, 2000, derive_seed(seed, 1));
  MlpClassifier clf(2, {16, 16}, 4, derive_seed(seed, 2));
  PretrainConfig pc;
  pc.epochs = epochs;
  pc.batch_size = 128;
  pc.optimizer.learning_rate = 1e-2;
  pc.optimizer.cosine = true;
  pretrain(clf, train, pc, derive_seed(seed, 3));
  return clf;
}

/// Adds N(0, scale^2) noise to every entry.
inline void perturb(const std::vector<Param> &params, Rng &rng, double scale) {
  std::normal_distribution<double> n(0.0, scale);
  for (const Param &p : params)
    for (double &v : p.value)
      v += n(rng);
}

/// Worst relative error of the unified-loss gradient over every parameter.
inline double unified_grad_error(RefinerUnified &r, const Matrix &li,
                                 std::span<const int> y, const Matrix &lb,
                                 double alpha) {
  r.net().zero_grad();
  unified_loss_and_grad(r, li, y, lb, alpha);
  const auto params = r.net().params();
  const auto analytic = grads_of(params);
  const double err = max_fd_error(params, analytic, [&] {
    return unified_loss_and_grad(r, li, y, lb, alpha).total;
  });
  r.net().zero_grad();
  return err;
}

inline std::vector<Param> split_params(RefinerSplit &r) {
  std::vector<Param> out;
  r.detector().collect(out, "detector.");
  for (const Param &p : r.generator().params())
    out.push_back(p);
  return out;
}

inline double split_grad_error(RefinerSplit &r, const Matrix &li,
                               std::span<const int> y, const Matrix &lb) {
  r.detector().zero_grad();
  r.generator().zero_grad();
  split_loss_and_grad(r, li, y, lb);
  const auto params = split_params(r);
  const auto analytic = grads_of(params);
  const double err = max_fd_error(params, analytic, [&] {
    return split_loss_and_grad(r, li, y, lb).total;
  });
  r.detector().zero_grad();
  r.generator().zero_grad();
  return err;
}

/// Relative path -> contents of every regular file under `root`.
inline std::map<std::string, std::string>
tree_bytes(const std::filesystem::path &root) {
  std::map<std::string, std::string> out;
  for (const auto &e : std::filesystem::recursive_directory_iterator(root))
    if (e.is_regular_file()) {
      std::ifstream in(e.path(), std::ios::binary);
      std::ostringstream ss;
      ss << in.rdbuf();
      out[std::filesystem::relative(e.path(), root).string()] = ss.str();
    }
  return out;
}

/// Runs the command-line tool with output discarded; returns its exit code.
inline int run_cli(const std::string &args) {
  const std::string cmd =
      std::string(SHIFTLAB_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

} // namespace testing
