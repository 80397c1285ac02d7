// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "shiftlab/adapt.hpp"
#include "shiftlab/refiner.hpp"
#include "shiftlab/theory.hpp"

namespace shiftlab::harness {

namespace fs = std::filesystem;

enum ExitCode : int {
  kOk = 0,
  kConfigError = 1,
  kVerificationFailed = 2,
  kDiverged = 3,
};

/// Invalid configuration; `fields` names every offending key path.
class ConfigError : public std::runtime_error {
public:
  ConfigError(const std::string &what, std::vector<std::string> fields = {});
  const std::vector<std::string> &fields() const noexcept { return fields_; }

private:
  std::vector<std::string> fields_;
};

// ---- configuration --------------------------------------------------------

enum class BenchmarkKind { paired, toy };
enum class ShiftKind { none, long_tail, online_imbalance };

struct BenchmarkConfig {
  BenchmarkKind kind = BenchmarkKind::paired;
  std::size_t classes = 10; // paired
  std::size_t dim = 16;     // paired
  double sigma = 1.0;
  double separation = 3.0; // paired
  double spread = 1.0;     // paired
  double d = 1.0;          // toy
  double beta = 2.0;       // toy
  double p = 0.25;         // toy test prior of class 1
  Vector test_shift;       // covariate shift added at test time (dim)
  std::size_t train_size = 10000;
  std::size_t intermediate_size = 10000;
};

struct ShiftConfig {
  ShiftKind kind = ShiftKind::long_tail;
  std::vector<double> values{1.0, 10.0, 100.0}; // rho or IR
  std::size_t head_size = 1000;   // long_tail: n of the head class
  bool inverse = false;           // long_tail: mirrored class order
  std::size_t subset_size = 1000; // online_imbalance
  std::size_t pool_size = 8000;   // online_imbalance / none
};

enum class Variant { unified, split };

struct ExperimentConfig {
  BenchmarkConfig benchmark;
  std::vector<std::size_t> hidden{64, 64};
  PretrainConfig pretrain;
  IntermediateConfig intermediate;       // unified variant
  IntermediateConfig split_intermediate; // split variant
  AdaptConfig adapt;                     // method / use_dart filled per run
  std::vector<Method> methods{Method::bnadapt, Method::tent, Method::pl};
  std::vector<bool> dart{false, true};
  ShiftConfig shift;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3};
  Variant variant = Variant::unified;
  std::size_t threads = 0; // 0: hardware concurrency
  std::string output_dir = "out";

  Json canonical; // normalized echo of every field
  std::string hash;
  /// Digests of input files (model, refiner) echoed into result files.
  Json inputs = Json::object();

  std::size_t classes() const noexcept;
  std::size_t input_dim() const noexcept;
};

Variant parse_variant(std::string_view name);
std::string_view to_string(Variant v) noexcept;
std::string_view to_string(ShiftKind k) noexcept;

/// Strict parse: unknown keys and invalid values are collected and
/// reported together in a ConfigError.
ExperimentConfig parse_config(const Json &j);
ExperimentConfig load_config(const fs::path &path);

// ---- experiment building blocks ------------------------------------------

GaussianMixtureSpec training_spec(const ExperimentConfig &cfg);
GaussianMixtureSpec test_spec(const ExperimentConfig &cfg);

LabeledDataset training_set(const ExperimentConfig &cfg, std::uint64_t seed);
LabeledDataset intermediate_set(const ExperimentConfig &cfg, std::uint64_t seed);
/// Test stream for shift value `index` (shared by every method and flag).
BatchStream test_stream(const ExperimentConfig &cfg, std::size_t index,
                        std::uint64_t seed);

struct PretrainOutcome {
  MlpClassifier model;
  double source_accuracy = 0;
};
PretrainOutcome pretrain_model(const ExperimentConfig &cfg, std::uint64_t seed);

struct RefinerOutcome {
  Refiner refiner;
  std::vector<LossRecord> curve;
};
RefinerOutcome train_refiner(const ExperimentConfig &cfg,
                             const MlpClassifier &model, Variant variant,
                             std::uint64_t seed);

struct RunKey {
  Method method = Method::bnadapt;
  bool dart = false;
  std::size_t shift_index = 0;
  std::uint64_t seed = 0;
};

struct RunRecord {
  RunKey key;
  std::string hash;
  std::optional<RunResult> result;
  std::string error; // set when the run failed
};

/// Cartesian product methods x shifts x seeds x dart flags.
std::vector<RunKey> run_grid(const ExperimentConfig &cfg);
std::string run_hash(const ExperimentConfig &cfg, const RunKey &key);

/// Executes runs on `threads` workers; per-run failures are recorded, not
/// thrown. Records come back in key order.
std::vector<RunRecord> execute_runs(
    const ExperimentConfig &cfg, const std::vector<RunKey> &keys,
    const std::function<const MlpClassifier &(std::uint64_t)> &model_for_seed,
    const std::function<const Refiner *(std::uint64_t)> &refiner_for_seed,
    std::size_t threads);

// ---- reporting ------------------------------------------------------------

struct SummaryRow {
  Method method = Method::bnadapt;
  bool dart = false;
  double shift_value = 0;
  double mean = 0; // percent
  double std = 0;  // percent, sample std (0 for one seed)
  std::vector<double> accuracies; // percent, per successful seed
  std::vector<std::string> runs;  // run hashes
  std::vector<std::string> failures;
};

std::vector<SummaryRow> summarize(const ExperimentConfig &cfg,
                                  const std::vector<RunRecord> &runs);
Json summary_to_json(const ExperimentConfig &cfg,
                     const std::vector<SummaryRow> &rows);
/// Aligned table, accuracies in percent with one decimal.
std::string summary_text(const ExperimentConfig &cfg,
                         const std::vector<SummaryRow> &rows);

Json run_record_json(const ExperimentConfig &cfg, const RunRecord &run);
/// "# config_hash=<h> seed=<s>" followed by a newline.
std::string provenance_line(const std::string &hash, std::uint64_t seed);
std::string loss_curve_csv(const std::string &hash, std::uint64_t seed,
                           const std::vector<LossRecord> &curve);

/// Writes run files, summary.json and summary.txt into `dir`.
void write_results(const ExperimentConfig &cfg, const fs::path &dir,
                   const std::vector<RunRecord> &runs);

// ---- toy verification -----------------------------------------------------

struct MonteCarloCase {
  ToyParams params;
  std::uint64_t seed = 0;
};

struct ToyVerifyConfig {
  PropertyGrid grid;
  std::vector<MonteCarloCase> cases;
  std::size_t mc_samples = 1000000; // per class
  double mc_sigmas = 3.0;
  std::size_t centroid_models = 20;
  std::size_t centroid_classes = 3;
  std::size_t centroid_dim = 5;
  std::uint64_t centroid_seed = 0;
  double wstar_tolerance = 1e-8;
  double identity_tolerance = 1e-12;
  Json canonical;
  std::string hash;
};

ToyVerifyConfig parse_toy_verify(const Json &j);

struct CheckResult {
  std::string name;
  bool passed = false;
  Json detail;
};

struct ToyVerifyReport {
  std::vector<CheckResult> checks;
  bool ok() const noexcept;
};

ToyVerifyReport run_toy_verify(const ToyVerifyConfig &cfg,
                               const NormalCdf &cdf = normal_cdf);
Json toy_report_to_json(const ToyVerifyConfig &cfg,
                        const ToyVerifyReport &report);

/// A deliberately wrong CDF (logistic approximation) for negative controls.
double faulty_normal_cdf(double x);

// ---- commands -------------------------------------------------------------

struct CommandOptions {
  fs::path config;
  std::optional<fs::path> out;
  std::optional<std::uint64_t> seed;
  std::optional<Variant> variant;
  std::optional<fs::path> model;
  std::optional<fs::path> refiner;
  bool phi_fault = false;
};

/// Each command returns an ExitCode; errors are reported on `err`.
int cmd_pretrain(const CommandOptions &opt, std::ostream &log);
int cmd_intermediate(const CommandOptions &opt, std::ostream &log);
int cmd_adapt(const CommandOptions &opt, std::ostream &log);
int cmd_toy_verify(const CommandOptions &opt, std::ostream &log);
int cmd_sweep(const CommandOptions &opt, std::ostream &log);

/// Runs `body`, mapping exceptions to exit codes with a message on `err`.
int guarded(const std::function<int()> &body, std::ostream &err);

} // namespace shiftlab::harness
