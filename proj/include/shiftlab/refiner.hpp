// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <variant>
#include <vector>

#include "shiftlab/classifier.hpp"
#include "shiftlab/datagen.hpp"
#include "shiftlab/layers.hpp"
#include "shiftlab/matrix.hpp"
#include "shiftlab/optim.hpp"
#include "shiftlab/serialize.hpp"

namespace shiftlab {

/// Averaged pseudo-label distribution and prediction deviation of a batch.
struct BatchSignature {
  Vector p_bar; // simplex, length K
  double d = 0; // mean D(u, softmax(l)), >= ln K
};

/// Signature of a batch from its logits.
BatchSignature signature_from_logits(const Matrix &logits);

/// Signature under the frozen classifier with every BN layer in replace
/// mode. `logit_scale` multiplies the logits first.
BatchSignature batch_signature(const MlpClassifier &frozen, const Matrix &batch,
                               double logit_scale = 1.0);

/// Logit transform l -> l W + b.
struct AffineRefinement {
  Matrix W; // K x K
  Vector b; // K

  static AffineRefinement identity(std::size_t classes);
  std::size_t classes() const noexcept { return b.size(); }
  bool is_identity() const;
};

/// l' = l W + b; with `preserve_norm` each row becomes |l| l' / |l'|.
/// A row whose refined norm is zero is left unrescaled.
Matrix apply_refinement(const Matrix &logits, const AffineRefinement &r,
                        bool preserve_norm);

/// Gradient of a loss with respect to `logits`, given its gradient with
/// respect to apply_refinement(logits, r, preserve_norm).
Matrix apply_refinement_backward(const Matrix &logits,
                                 const AffineRefinement &r, bool preserve_norm,
                                 const Matrix &grad_out);

class UntrainedRefinerError : public std::logic_error {
public:
  UntrainedRefinerError() : std::logic_error("refiner has not been trained") {}
};

/// Single module mapping concat(p_bar, d - d_offset) through a two-layer
/// perceptron to (W row-major, b).
class RefinerUnified {
public:
  RefinerUnified() = default;
  RefinerUnified(std::size_t classes, std::size_t hidden, std::uint64_t seed);

  std::size_t classes() const noexcept { return classes_; }
  std::size_t hidden() const noexcept { return hidden_; }
  double d_offset() const noexcept { return d_offset_; }

  bool trained() const noexcept { return trained_; }
  void mark_trained() noexcept { trained_ = true; }

  Matrix encode(const BatchSignature &sig) const;
  AffineRefinement decode(std::span<const double> output) const;

  /// Throws UntrainedRefinerError unless trained.
  AffineRefinement refine(const BatchSignature &sig) const;
  /// Forward without the trained check (training and gradient checks).
  AffineRefinement evaluate(const BatchSignature &sig) const;

  Sequential &net() noexcept { return net_; }
  const Sequential &net() const noexcept { return net_; }

  double alpha = 0.1; // metadata: regularization weight used in training

private:
  std::size_t classes_ = 0;
  std::size_t hidden_ = 0;
  double d_offset_ = 0.0;
  bool trained_ = false;
  Sequential net_;
};

/// Shift detector g1 (scalar affine map on d - d_offset, sigmoid gate at
/// 0.5) plus refinement generator g2 (two-layer perceptron on p_bar).
class RefinerSplit {
public:
  RefinerSplit() = default;
  RefinerSplit(std::size_t classes, std::size_t hidden, bool diagonal,
               std::uint64_t seed);

  std::size_t classes() const noexcept { return classes_; }
  std::size_t hidden() const noexcept { return hidden_; }
  bool diagonal() const noexcept { return diagonal_; }
  double d_offset() const noexcept { return d_offset_; }

  bool trained() const noexcept { return trained_; }
  void mark_trained() noexcept { trained_ = true; }

  double severity_logit(double d) const;
  /// s_B = sigmoid(g1(d - d_offset)).
  double severity(double d) const;
  AffineRefinement generate(std::span<const double> p_bar) const;
  AffineRefinement decode(std::span<const double> output) const;

  /// g2(p_bar) when s_B > 0.5 (strict), identity otherwise.
  AffineRefinement refine(const BatchSignature &sig) const;

  Linear &detector() noexcept { return detector_; }
  const Linear &detector() const noexcept { return detector_; }
  Sequential &generator() noexcept { return generator_; }
  const Sequential &generator() const noexcept { return generator_; }

private:
  std::size_t classes_ = 0;
  std::size_t hidden_ = 0;
  bool diagonal_ = false;
  double d_offset_ = 0.0;
  bool trained_ = false;
  Linear detector_;
  Sequential generator_;
};

using Refiner = std::variant<RefinerUnified, RefinerSplit>;

AffineRefinement refine(const Refiner &refiner, const BatchSignature &sig);
std::size_t refiner_classes(const Refiner &refiner);

// ---- intermediate-time training -------------------------------------------

struct IntermediateConfig {
  double alpha = 0.1;
  std::size_t epochs = 50;
  std::size_t batch_size = 64;
  double delta = 10.0;
  std::size_t n_chunks = 250;
  double learning_rate = 1e-3;
  bool cosine = true;
  std::size_t hidden = 1000;
  double detect_learning_rate = 1e-3; // split: g1
  double refine_learning_rate = 1e-3; // split: g2
  bool diagonal = false;              // split: diagonal W, b = 0
  double logit_scale = 1.0;
};

/// One logged training iteration. For the split variant `l_bal` holds the
/// detector BCE loss and `total` = l_imb + l_bal.
struct LossRecord {
  std::size_t iteration = 0;
  double l_imb = 0;
  double l_bal = 0;
  double total = 0;
};

struct DartLoss {
  double l_imb = 0;
  double l_bal = 0;
  double total = 0;
};

/// L_imb + alpha * L_bal at fixed classifier logits. Gradients are
/// accumulated into the refiner's parameter buffers (not zeroed here).
DartLoss unified_loss_and_grad(RefinerUnified &refiner, const Matrix &logits_imb,
                               std::span<const int> labels_imb,
                               const Matrix &logits_bal, double alpha);

/// Detector BCE pair and generator L_imb at fixed logits; gradients
/// accumulated into detector and generator buffers.
DartLoss split_loss_and_grad(RefinerSplit &refiner, const Matrix &logits_imb,
                             std::span<const int> labels_imb,
                             const Matrix &logits_bal);

struct UnifiedTraining {
  RefinerUnified refiner;
  std::vector<LossRecord> curve;
};

struct SplitTraining {
  RefinerSplit refiner;
  std::vector<LossRecord> curve;
};

/// Classifier parameters are only read; BN statistics come from each batch.
UnifiedTraining train_unified(const MlpClassifier &classifier,
                              const LabeledDataset &d_int,
                              const IntermediateConfig &cfg,
                              std::uint64_t seed);

SplitTraining train_split(const MlpClassifier &classifier,
                          const LabeledDataset &d_int,
                          const IntermediateConfig &cfg, std::uint64_t seed);

// ---- softmax temperature --------------------------------------------------

struct TemperatureEstimate {
  double T = 1.0;
  bool degenerate = false; // |denominator| < 1e-12, T forced to 1
};

/// Temperature matching first-order softmax confidence between training
/// statistics (mean max-logit, logit sum) and one test batch.
TemperatureEstimate temperature_for_batch(double train_max_logit_mean,
                                          double train_logit_sum,
                                          std::span<const double> test_max_logits,
                                          std::span<const double> test_logit_sums,
                                          std::size_t classes);

/// Running mean of per-batch temperatures over a stream.
class RunningTemperature {
public:
  RunningTemperature(double train_max_logit_mean, double train_logit_sum,
                     std::size_t classes);
  /// Folds in one batch and returns the running mean including it.
  double update(const Matrix &batch_logits);
  double value() const noexcept;
  std::size_t batches() const noexcept { return count_; }

private:
  double train_max_;
  double train_sum_;
  std::size_t classes_;
  double sum_ = 0.0;
  std::size_t count_ = 0;
};

// ---- persistence ----------------------------------------------------------

class RefinerFormatError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// {"format": "dart-refiner/1", "variant": "unified"|"split", "K",
///  "hidden", "d_offset", "alpha", "diagonal", "parameters": {...}}
Json refiner_to_json(const Refiner &refiner);
Refiner refiner_from_json(const Json &j);

void save_refiner(const Refiner &refiner, const std::filesystem::path &path,
                  const Json &metadata = Json::object());
Refiner load_refiner(const std::filesystem::path &path);
RefinerUnified load_unified(const std::filesystem::path &path);
RefinerSplit load_split(const std::filesystem::path &path);

} // namespace shiftlab
