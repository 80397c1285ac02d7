// SPDX-License-Identifier: Apache-2.0
#include "shiftlab/classifier.hpp"

#include <stdexcept>

#include "shiftlab/rng.hpp"

namespace shiftlab {

MlpClassifier::MlpClassifier(std::size_t input_dim,
                             std::vector<std::size_t> hidden,
                             std::size_t classes, std::uint64_t seed)
    : input_dim_(input_dim), classes_(classes), hidden_(std::move(hidden)) {
  if (input_dim_ == 0 || classes_ < 2)
    throw std::invalid_argument("classifier: bad input_dim or classes");
  Rng rng = make_rng(seed, 0xc1);
  std::vector<Layer> layers;
  std::size_t width = input_dim_;
  for (std::size_t h : hidden_) {
    Linear lin(width, h);
    lin.init_uniform(rng);
    layers.emplace_back(std::move(lin));
    layers.emplace_back(BatchNorm(h));
    layers.emplace_back(Relu{});
    width = h;
  }
  Linear head(width, classes_);
  head.init_uniform(rng);
  layers.emplace_back(std::move(head));
  net_ = Sequential(std::move(layers));
}

Matrix MlpClassifier::logits(const Matrix &x, BnMode mode) const {
  if (x.cols() != input_dim_)
    throw ShapeError("classifier: input width mismatch");
  return net_.infer(x, mode);
}

Matrix MlpClassifier::forward(const Matrix &x, BnMode mode) {
  if (x.cols() != input_dim_)
    throw ShapeError("classifier: input width mismatch");
  net_.set_bn_mode(mode);
  return net_.forward(x);
}

Matrix MlpClassifier::backward(const Matrix &grad_logits) {
  return net_.backward(grad_logits);
}

std::vector<Param> MlpClassifier::params() { return net_.params(); }

std::vector<Param> MlpClassifier::bn_affine_params() {
  std::vector<Param> out;
  for (auto &p : net_.params())
    if (p.bn_affine)
      out.push_back(p);
  return out;
}

std::vector<double> MlpClassifier::learnable_snapshot() const {
  std::vector<double> out;
  for (const auto &layer : net_.layers()) {
    if (const auto *l = std::get_if<Linear>(&layer)) {
      out.insert(out.end(), l->weight.values().begin(), l->weight.values().end());
      out.insert(out.end(), l->bias.begin(), l->bias.end());
    } else if (const auto *bn = std::get_if<BatchNorm>(&layer)) {
      out.insert(out.end(), bn->gamma.begin(), bn->gamma.end());
      out.insert(out.end(), bn->beta.begin(), bn->beta.end());
    }
  }
  return out;
}

std::vector<double> MlpClassifier::full_snapshot() const {
  std::vector<double> out = learnable_snapshot();
  for (const auto &layer : net_.layers())
    if (const auto *bn = std::get_if<BatchNorm>(&layer)) {
      out.insert(out.end(), bn->running_mean.begin(), bn->running_mean.end());
      out.insert(out.end(), bn->running_var.begin(), bn->running_var.end());
    }
  return out;
}

Json MlpClassifier::to_json() const {
  Json layers = Json::array();
  for (const auto &layer : net_.layers()) {
    if (const auto *l = std::get_if<Linear>(&layer)) {
      layers.push_back({{"type", "linear"},
                        {"weight", matrix_to_json(l->weight)},
                        {"bias", l->bias}});
    } else if (const auto *bn = std::get_if<BatchNorm>(&layer)) {
      layers.push_back({{"type", "batchnorm"},
                        {"gamma", bn->gamma},
                        {"beta", bn->beta},
                        {"running_mean", bn->running_mean},
                        {"running_var", bn->running_var},
                        {"momentum", bn->momentum},
                        {"epsilon", bn->epsilon}});
    } else {
      layers.push_back({{"type", "relu"}});
    }
  }
  return Json{{"format", "shiftlab-model/1"},
              {"input_dim", input_dim_},
              {"hidden", hidden_},
              {"classes", classes_},
              {"layers", std::move(layers)}};
}

MlpClassifier MlpClassifier::from_json(const Json &j) {
  if (j.value("format", "") != "shiftlab-model/1")
    throw std::invalid_argument("not a shiftlab-model/1 document");
  MlpClassifier c(j.at("input_dim").get<std::size_t>(),
                  j.at("hidden").get<std::vector<std::size_t>>(),
                  j.at("classes").get<std::size_t>(), 0);
  const auto &jl = j.at("layers");
  auto &layers = c.net_.layers();
  if (jl.size() != layers.size())
    throw std::invalid_argument("model: layer count mismatch");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto &e = jl.at(i);
    const std::string type = e.at("type").get<std::string>();
    if (auto *l = std::get_if<Linear>(&layers[i])) {
      if (type != "linear")
        throw std::invalid_argument("model: expected linear layer");
      Matrix w = matrix_from_json(e.at("weight"));
      auto b = e.at("bias").get<Vector>();
      if (!w.same_shape(l->weight) || b.size() != l->bias.size())
        throw std::invalid_argument("model: linear shape mismatch");
      l->weight = std::move(w);
      l->bias = std::move(b);
    } else if (auto *bn = std::get_if<BatchNorm>(&layers[i])) {
      if (type != "batchnorm")
        throw std::invalid_argument("model: expected batchnorm layer");
      auto take = [&](const char *key, Vector &dst) {
        auto v = e.at(key).get<Vector>();
        if (v.size() != dst.size())
          throw std::invalid_argument(std::string("model: bad length for ") + key);
        dst = std::move(v);
      };
      take("gamma", bn->gamma);
      take("beta", bn->beta);
      take("running_mean", bn->running_mean);
      take("running_var", bn->running_var);
      bn->momentum = e.at("momentum").get<double>();
      bn->epsilon = e.at("epsilon").get<double>();
    } else if (type != "relu") {
      throw std::invalid_argument("model: expected relu layer");
    }
  }
  return c;
}

} // namespace shiftlab
