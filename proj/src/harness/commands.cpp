// SPDX-License-Identifier: Apache-2.0
#include <atomic>
#include <fstream>
#include <sstream>
#include <thread>

#include "shiftlab/errors.hpp"
#include "shiftlab/harness.hpp"

namespace shiftlab::harness {

// ---- experiment building blocks ------------------------------------------

GaussianMixtureSpec training_spec(const ExperimentConfig &cfg) {
  const BenchmarkConfig &b = cfg.benchmark;
  if (b.kind == BenchmarkKind::toy)
    return toy_spec(b.d, b.beta, b.sigma, 0.25, {0.0, 0.0});
  return paired_benchmark_spec(b.classes, b.dim, b.sigma, b.separation,
                               b.spread);
}

GaussianMixtureSpec test_spec(const ExperimentConfig &cfg) {
  const BenchmarkConfig &b = cfg.benchmark;
  if (b.kind == BenchmarkKind::toy)
    return toy_spec(b.d, b.beta, b.sigma, b.p, b.test_shift);
  GaussianMixtureSpec s = training_spec(cfg);
  s.covariate_shift = b.test_shift;
  return s;
}

LabeledDataset training_set(const ExperimentConfig &cfg, std::uint64_t seed) {
  return sample_mixture(training_spec(cfg), cfg.benchmark.train_size,
                        derive_seed(seed, 1));
}

LabeledDataset intermediate_set(const ExperimentConfig &cfg,
                                std::uint64_t seed) {
  return sample_mixture(training_spec(cfg), cfg.benchmark.intermediate_size,
                        derive_seed(seed, 4));
}

BatchStream test_stream(const ExperimentConfig &cfg, std::size_t index,
                        std::uint64_t seed) {
  const ShiftConfig &sh = cfg.shift;
  const double value = sh.values.at(index);
  const GaussianMixtureSpec spec = test_spec(cfg);
  const std::uint64_t data_seed = derive_seed(seed, 100 + index);
  const std::uint64_t order_seed = derive_seed(seed, 200 + index);
  const std::size_t bs = cfg.adapt.batch_size;
  switch (sh.kind) {
  case ShiftKind::none:
    return iid_stream(sample_mixture(spec, sh.pool_size, data_seed), bs,
                      order_seed);
  case ShiftKind::long_tail: {
    const auto counts =
        long_tail_counts(sh.head_size, value, spec.classes, sh.inverse);
    return iid_stream(sample_class_counts(spec, counts, data_seed), bs,
                      order_seed);
  }
  case ShiftKind::online_imbalance:
    return online_imbalanced_stream(
        sample_mixture(spec, sh.pool_size, data_seed), value, sh.subset_size,
        bs, order_seed);
  }
  throw std::logic_error("unhandled shift kind");
}

PretrainOutcome pretrain_model(const ExperimentConfig &cfg,
                               std::uint64_t seed) {
  PretrainOutcome out{MlpClassifier(cfg.input_dim(), cfg.hidden, cfg.classes(),
                                    derive_seed(seed, 2)),
                      0.0};
  out.source_accuracy = pretrain(out.model, training_set(cfg, seed),
                                 cfg.pretrain, derive_seed(seed, 3));
  return out;
}

RefinerOutcome train_refiner(const ExperimentConfig &cfg,
                             const MlpClassifier &model, Variant variant,
                             std::uint64_t seed) {
  const LabeledDataset d_int = intermediate_set(cfg, seed);
  if (variant == Variant::unified) {
    auto t = train_unified(model, d_int, cfg.intermediate, derive_seed(seed, 5));
    return {std::move(t.refiner), std::move(t.curve)};
  }
  auto t = train_split(model, d_int, cfg.split_intermediate,
                       derive_seed(seed, 5));
  return {std::move(t.refiner), std::move(t.curve)};
}

std::vector<RunKey> run_grid(const ExperimentConfig &cfg) {
  std::vector<RunKey> keys;
  for (Method m : cfg.methods)
    for (std::size_t s = 0; s < cfg.shift.values.size(); ++s)
      for (std::uint64_t seed : cfg.seeds)
        for (bool dart : cfg.dart)
          keys.push_back({m, dart, s, seed});
  return keys;
}

std::string run_hash(const ExperimentConfig &cfg, const RunKey &key) {
  const Json j = {{"config_hash", cfg.hash},
                  {"inputs", cfg.inputs},
                  {"method", std::string(to_string(key.method))},
                  {"dart", key.dart},
                  {"shift_index", key.shift_index},
                  {"shift_value", cfg.shift.values.at(key.shift_index)},
                  {"seed", key.seed}};
  return fnv1a_hex(j.dump());
}

namespace {

std::size_t worker_count(std::size_t requested, std::size_t jobs) {
  std::size_t n = requested ? requested : std::thread::hardware_concurrency();
  return std::max<std::size_t>(1, std::min(n, jobs));
}

// Runs body(i) for i in [0, n) on a small pool; body must not throw.
void parallel_for(std::size_t n, std::size_t threads,
                  const std::function<void(std::size_t)> &body) {
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++)
      body(i);
  };
  const std::size_t k = worker_count(threads, n);
  if (k == 1) {
    work();
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < k; ++t)
    pool.emplace_back(work);
  for (auto &t : pool)
    t.join();
}

} // namespace

std::vector<RunRecord> execute_runs(
    const ExperimentConfig &cfg, const std::vector<RunKey> &keys,
    const std::function<const MlpClassifier &(std::uint64_t)> &model_for_seed,
    const std::function<const Refiner *(std::uint64_t)> &refiner_for_seed,
    std::size_t threads) {
  std::vector<RunRecord> records(keys.size());
  parallel_for(keys.size(), threads, [&](std::size_t i) {
    RunRecord &rec = records[i];
    rec.key = keys[i];
    rec.hash = run_hash(cfg, rec.key);
    try {
      AdaptConfig ac = cfg.adapt;
      ac.method = rec.key.method;
      ac.use_dart = rec.key.dart;
      const Refiner *refiner =
          rec.key.dart ? refiner_for_seed(rec.key.seed) : nullptr;
      rec.result = run_stream(model_for_seed(rec.key.seed),
                              test_stream(cfg, rec.key.shift_index,
                                          rec.key.seed),
                              ac, refiner);
    } catch (const std::exception &e) {
      rec.error = e.what();
    }
  });
  return records;
}

// ---- commands -------------------------------------------------------------

namespace {

fs::path out_dir(const CommandOptions &opt, const ExperimentConfig &cfg) {
  return opt.out ? *opt.out : fs::path(cfg.output_dir);
}

std::uint64_t pick_seed(const CommandOptions &opt,
                        const ExperimentConfig &cfg) {
  return opt.seed ? *opt.seed : cfg.seeds.front();
}

std::string file_digest(const fs::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw ConfigError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return fnv1a_hex(ss.str());
}

MlpClassifier load_model(const fs::path &path) {
  if (!fs::exists(path))
    throw ConfigError("model file not found: " + path.string(), {"--model"});
  try {
    return MlpClassifier::from_json(read_json_file(path));
  } catch (const std::exception &e) {
    throw ConfigError(std::string("invalid model file: ") + e.what(),
                      {"--model"});
  }
}

Json model_document(const ExperimentConfig &cfg, std::uint64_t seed,
                    const PretrainOutcome &p) {
  Json j = p.model.to_json();
  j["metadata"] = {{"command", "pretrain"},
                   {"config_hash", cfg.hash},
                   {"seed", seed},
                   {"source_accuracy", p.source_accuracy}};
  return j;
}

Json refiner_metadata(const ExperimentConfig &cfg, std::uint64_t seed,
                      Variant variant, const std::string &model_hash) {
  const IntermediateConfig &ic =
      variant == Variant::unified ? cfg.intermediate : cfg.split_intermediate;
  return {{"command", "intermediate"},
          {"config_hash", cfg.hash},
          {"seed", seed},
          {"variant", std::string(to_string(variant))},
          {"alpha", ic.alpha},
          {"model_hash", model_hash},
          {"intermediate", cfg.canonical.at(variant == Variant::unified
                                                ? "intermediate"
                                                : "split_intermediate")}};
}

} // namespace

int cmd_pretrain(const CommandOptions &opt, std::ostream &log) {
  const ExperimentConfig cfg = load_config(opt.config);
  const std::uint64_t seed = pick_seed(opt, cfg);
  const fs::path dir = out_dir(opt, cfg);
  const PretrainOutcome p = pretrain_model(cfg, seed);
  fs::create_directories(dir);
  write_json_file(dir / "model.json", model_document(cfg, seed, p));
  log << "pretrain: seed " << seed << ", source accuracy "
      << 100.0 * p.source_accuracy << "%, wrote " << (dir / "model.json").string()
      << "\n";
  return kOk;
}

int cmd_intermediate(const CommandOptions &opt, std::ostream &log) {
  const ExperimentConfig cfg = load_config(opt.config);
  const std::uint64_t seed = pick_seed(opt, cfg);
  const fs::path dir = out_dir(opt, cfg);
  const fs::path model_path = opt.model ? *opt.model : dir / "model.json";
  const MlpClassifier model = load_model(model_path);
  if (model.classes() != cfg.classes() || model.input_dim() != cfg.input_dim())
    throw ConfigError("model does not match the configured benchmark",
                      {"--model"});
  const Variant variant = opt.variant ? *opt.variant : cfg.variant;
  const RefinerOutcome r = train_refiner(cfg, model, variant, seed);
  fs::create_directories(dir);
  save_refiner(r.refiner, dir / "refiner.json",
               refiner_metadata(cfg, seed, variant, file_digest(model_path)));
  write_text_file(dir / "loss_curve.csv", loss_curve_csv(cfg.hash, seed, r.curve));
  log << "intermediate: " << to_string(variant) << " refiner, "
      << r.curve.size() << " iterations, wrote "
      << (dir / "refiner.json").string() << "\n";
  return kOk;
}

int cmd_adapt(const CommandOptions &opt, std::ostream &log) {
  ExperimentConfig cfg = load_config(opt.config);
  if (opt.seed)
    cfg.seeds = {*opt.seed};
  const fs::path dir = out_dir(opt, cfg);
  const fs::path model_path = opt.model ? *opt.model : dir / "model.json";
  const MlpClassifier model = load_model(model_path);
  if (model.classes() != cfg.classes() || model.input_dim() != cfg.input_dim())
    throw ConfigError("model does not match the configured benchmark",
                      {"--model"});
  cfg.inputs["model"] = file_digest(model_path);

  std::optional<Refiner> refiner;
  const bool wants_dart =
      std::find(cfg.dart.begin(), cfg.dart.end(), true) != cfg.dart.end();
  if (wants_dart) {
    const fs::path rp = opt.refiner ? *opt.refiner : dir / "refiner.json";
    if (!fs::exists(rp))
      throw ConfigError("DART runs requested but no refiner file: " +
                            rp.string(),
                        {"--refiner"});
    refiner = load_refiner(rp);
    if (refiner_classes(*refiner) != model.classes())
      throw ConfigError("refiner K does not match the model", {"--refiner"});
    cfg.inputs["refiner"] = file_digest(rp);
  }
  const auto runs = execute_runs(
      cfg, run_grid(cfg),
      [&](std::uint64_t) -> const MlpClassifier & { return model; },
      [&](std::uint64_t) { return refiner ? &*refiner : nullptr; },
      cfg.threads);
  write_results(cfg, dir, runs);
  log << summary_text(cfg, summarize(cfg, runs));
  return kOk;
}

int cmd_sweep(const CommandOptions &opt, std::ostream &log) {
  ExperimentConfig cfg = load_config(opt.config);
  if (opt.seed)
    cfg.seeds = {*opt.seed};
  if (opt.variant)
    cfg.variant = *opt.variant;
  const fs::path dir = out_dir(opt, cfg);
  const bool wants_dart =
      std::find(cfg.dart.begin(), cfg.dart.end(), true) != cfg.dart.end();

  struct Prepared {
    std::optional<PretrainOutcome> model;
    std::optional<RefinerOutcome> refiner;
    std::string error;
  };
  std::vector<Prepared> prepared(cfg.seeds.size());
  parallel_for(cfg.seeds.size(), cfg.threads, [&](std::size_t i) {
    try {
      prepared[i].model = pretrain_model(cfg, cfg.seeds[i]);
      if (wants_dart)
        prepared[i].refiner = train_refiner(cfg, prepared[i].model->model,
                                            cfg.variant, cfg.seeds[i]);
    } catch (const std::exception &e) {
      prepared[i].error = e.what();
    }
  });
  auto slot = [&](std::uint64_t seed) -> const Prepared & {
    const auto it = std::find(cfg.seeds.begin(), cfg.seeds.end(), seed);
    return prepared[static_cast<std::size_t>(it - cfg.seeds.begin())];
  };

  for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
    const Prepared &p = prepared[i];
    const std::uint64_t seed = cfg.seeds[i];
    const fs::path sd = dir / ("seed_" + std::to_string(seed));
    fs::create_directories(sd);
    if (!p.model) {
      log << "sweep: seed " << seed << " preparation failed: " << p.error
          << "\n";
      continue;
    }
    write_json_file(sd / "model.json", model_document(cfg, seed, *p.model));
    if (p.refiner) {
      save_refiner(p.refiner->refiner, sd / "refiner.json",
                   refiner_metadata(cfg, seed, cfg.variant,
                                    file_digest(sd / "model.json")));
      write_text_file(sd / "loss_curve.csv",
                      loss_curve_csv(cfg.hash, seed, p.refiner->curve));
    } else if (wants_dart) {
      log << "sweep: seed " << seed << " refiner failed: " << p.error << "\n";
    }
  }

  const auto runs = execute_runs(
      cfg, run_grid(cfg),
      [&](std::uint64_t seed) -> const MlpClassifier & {
        const Prepared &p = slot(seed);
        if (!p.model)
          throw std::runtime_error("preparation failed: " + p.error);
        return p.model->model;
      },
      [&](std::uint64_t seed) -> const Refiner * {
        const Prepared &p = slot(seed);
        if (!p.refiner)
          throw std::runtime_error("refiner unavailable: " + p.error);
        return &p.refiner->refiner;
      },
      cfg.threads);
  write_results(cfg, dir, runs);
  log << summary_text(cfg, summarize(cfg, runs));
  return kOk;
}

int cmd_toy_verify(const CommandOptions &opt, std::ostream &log) {
  if (!fs::exists(opt.config))
    throw ConfigError("parameter file not found: " + opt.config.string(),
                      {"--config"});
  Json j;
  try {
    j = read_json_file(opt.config);
  } catch (const std::exception &e) {
    throw ConfigError(std::string("parameters are not valid JSON: ") + e.what(),
                      {"--config"});
  }
  const ToyVerifyConfig cfg = parse_toy_verify(j);
  const ToyVerifyReport report = run_toy_verify(
      cfg, opt.phi_fault ? NormalCdf(faulty_normal_cdf) : NormalCdf(normal_cdf));
  const fs::path dir = opt.out ? *opt.out : fs::path("out");
  fs::create_directories(dir);
  write_json_file(dir / "toy_report.json", toy_report_to_json(cfg, report));
  for (const CheckResult &c : report.checks)
    log << (c.passed ? "PASS " : "FAIL ") << c.name << "\n";
  return report.ok() ? kOk : kVerificationFailed;
}

int guarded(const std::function<int()> &body, std::ostream &err) {
  try {
    return body();
  } catch (const ConfigError &e) {
    err << "error: " << e.what() << "\n";
    return kConfigError;
  } catch (const DivergenceError &e) {
    err << "error: " << e.what() << "\n";
    return kDiverged;
  } catch (const std::exception &e) {
    err << "error: " << e.what() << "\n";
    return kConfigError;
  }
}

} // namespace shiftlab::harness
