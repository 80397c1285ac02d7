// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "shiftlab/classifier.hpp"
#include "shiftlab/datagen.hpp"
#include "shiftlab/optim.hpp"
#include "shiftlab/refiner.hpp"

namespace shiftlab {

enum class Method { noadapt, bnadapt, tent, pl };

Method parse_method(std::string_view name);
std::string_view to_string(Method m) noexcept;

struct PretrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 128;
  OptimizerConfig optimizer{OptimizerKind::adam, 1e-2};
  double accuracy_floor = 0.0; // source accuracy below this is an error
};

/// Supervised training with BN in train mode. Returns the eval-mode source
/// accuracy. Throws DivergenceError on a non-finite loss and
/// std::runtime_error when the floor is missed.
double pretrain(MlpClassifier &classifier, const LabeledDataset &data,
                const PretrainConfig &cfg, std::uint64_t seed);

/// Fraction of correct argmax predictions.
double accuracy(const Matrix &logits, std::span<const int> labels);

/// Logits with every BN layer using the batch's own statistics.
Matrix bn_adapt_forward(const MlpClassifier &classifier, const Matrix &batch);

/// One entropy-minimization step on the BN affine parameters. With a
/// refinement the entropy is taken on the norm-preserved refined logits.
/// Returns the objective before the step.
double tent_step(MlpClassifier &classifier, const Matrix &batch,
                 const AffineRefinement *refinement, Optimizer &optimizer);

/// The TENT objective without any update.
double tent_objective(const MlpClassifier &classifier, const Matrix &batch,
                      const AffineRefinement *refinement);

/// One cross-entropy step on confident samples (max softmax >= threshold,
/// refined when a refinement is given) against their argmax labels, BN
/// affine parameters only. Returns how many samples were used; zero means
/// no update.
std::size_t pl_step(MlpClassifier &classifier, const Matrix &batch,
                    const AffineRefinement *refinement, Optimizer &optimizer,
                    double threshold);

struct AdaptConfig {
  Method method = Method::bnadapt;
  OptimizerConfig optimizer{OptimizerKind::adam, 1e-3};
  double pl_threshold = 0.95;
  std::size_t batch_size = 200;
  bool use_dart = false;
  double logit_scale = 1.0;
};

struct BatchTrace {
  Vector p_bar;
  double d = 0;
  double accuracy = 0;
  std::size_t size = 0;
  bool refined = false; // a non-identity refinement was applied
};

struct RunResult {
  double accuracy = 0;
  Vector per_class_accuracy;    // NaN for classes absent from the stream
  Matrix confusion;             // row-normalized
  std::vector<std::size_t> counts; // samples per true class
  std::vector<BatchTrace> trace;
};

/// Adapts a copy of `classifier` along the stream. A frozen copy taken at
/// the start supplies every batch signature. `refiner` is consulted only
/// when config.use_dart is set.
RunResult run_stream(MlpClassifier classifier, const BatchStream &stream,
                     const AdaptConfig &config,
                     const Refiner *refiner = nullptr);

Json run_result_to_json(const RunResult &r);
/// Header row of class indices, then K rows of K fractions.
std::string confusion_csv(const Matrix &confusion);

} // namespace shiftlab
