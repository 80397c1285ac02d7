// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero when any criterion fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "shiftlab/harness.hpp"
#include "support.hpp"

using namespace shiftlab;
using namespace shiftlab::harness;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool passed = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string &name, const Outcome &o) {
  std::printf("criterion %2d %s  %s: %s\n", id, o.passed ? "PASS" : "FAIL",
              name.c_str(), o.detail.c_str());
  std::fflush(stdout);
  failures += o.passed ? 0 : 1;
}

template <typename... A> std::string fmt(const char *f, A... a) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, a...);
  return buf;
}

fs::path source(const std::string &rel) {
  return fs::path(SHIFTLAB_SOURCE_DIR) / rel;
}

std::size_t threads() {
  return std::max(1u, std::thread::hardware_concurrency());
}

double mean(const std::vector<double> &v) {
  double s = 0.0;
  for (double x : v)
    s += x;
  return s / double(v.size());
}

double sample_var(const std::vector<double> &v) {
  const double m = mean(v);
  double s = 0.0;
  for (double x : v)
    s += (x - m) * (x - m);
  return s / double(v.size() - 1);
}

bool same_bytes(const std::vector<double> &a, const std::vector<double> &b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

std::vector<double> snapshot(std::vector<Param> params, bool bn_affine) {
  std::vector<double> out;
  for (const Param &p : params)
    if (p.bn_affine == bn_affine)
      out.insert(out.end(), p.value.begin(), p.value.end());
  return out;
}

// Per-seed models (and optionally refiners) for an experiment config.
struct Prepared {
  std::vector<MlpClassifier> models;
  std::vector<Refiner> refiners;
};

Prepared prepare(const ExperimentConfig &cfg, std::optional<Variant> variant) {
  Prepared p;
  p.models.resize(cfg.seeds.size());
  std::vector<std::optional<Refiner>> refs(cfg.seeds.size());
  std::vector<std::thread> pool;
  for (std::size_t i = 0; i < cfg.seeds.size(); ++i)
    pool.emplace_back([&, i] {
      p.models[i] = pretrain_model(cfg, cfg.seeds[i]).model;
      if (variant)
        refs[i] = train_refiner(cfg, p.models[i], *variant, cfg.seeds[i]).refiner;
    });
  for (auto &t : pool)
    t.join();
  for (auto &r : refs)
    if (r)
      p.refiners.push_back(std::move(*r));
  return p;
}

std::size_t seed_slot(const ExperimentConfig &cfg, std::uint64_t seed) {
  return static_cast<std::size_t>(
      std::find(cfg.seeds.begin(), cfg.seeds.end(), seed) - cfg.seeds.begin());
}

std::vector<RunRecord> run_all(const ExperimentConfig &cfg, const Prepared &p,
                               const std::vector<RunKey> &keys) {
  return execute_runs(
      cfg, keys,
      [&](std::uint64_t s) -> const MlpClassifier & {
        return p.models[seed_slot(cfg, s)];
      },
      [&](std::uint64_t s) -> const Refiner * {
        return p.refiners.empty() ? nullptr : &p.refiners[seed_slot(cfg, s)];
      },
      threads());
}

// ---- criteria -------------------------------------------------------------

Outcome closed_form_vs_monte_carlo() {
  const auto t0 = Clock::now();
  const auto tv = parse_toy_verify(read_json_file(source("configs/toy_verify.json")));
  const std::size_t n = 1000000;
  double worst = 0.0;
  std::size_t cells = 0, bad = 0;
  for (const auto &c : tv.cases) {
    const Matrix cf = closed_form_confusion(c.params);
    const Matrix mc = monte_carlo_confusion(c.params, n, c.seed);
    for (std::size_t i = 0; i < 16; ++i) {
      const double p = cf.data()[i];
      const double se = std::max(std::sqrt(p * (1 - p) / double(n)), 0.5 / double(n));
      const double z = std::abs(mc.data()[i] - p) / se;
      worst = std::max(worst, z);
      bad += z > 3.0;
      ++cells;
    }
  }
  const double secs = seconds_since(t0);
  return {tv.cases.size() >= 5 && bad == 0 && secs < 30.0,
          fmt("%zu cases, %zu cells, n=%zu per class, max |z| = %.2f (< 3), %.1f s (< 30 s)",
              tv.cases.size(), cells, n, worst, secs)};
}

Outcome properties_on_grid() {
  const auto t0 = Clock::now();
  const PropertyGrid grid;
  const auto r = verify_properties(grid);
  const double secs = seconds_since(t0);
  return {r.ok() && r.p3_checked && r.points == 12 && secs < 5.0,
          fmt("%zu grid points, #3 checked = %s, %zu violations, %.3f s (< 5 s)",
              r.points, r.p3_checked ? "yes" : "no", r.violations.size(), secs)};
}

Outcome optimal_refinement_oracle() {
  Rng rng = make_rng(2024);
  double worst = 0.0, worst_id = 0.0;
  for (int t = 0; t < 20; ++t) {
    auto m = random_centroid_model(3, 5, rng);
    const Matrix a = optimal_refinement(m);
    const Matrix b = least_squares_refinement_oracle(m);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      num += (a.data()[i] - b.data()[i]) * (a.data()[i] - b.data()[i]);
      den += b.data()[i] * b.data()[i];
    }
    worst = std::max(worst, std::sqrt(num / den));
    m.q_test = m.p_train;
    const Matrix w = optimal_refinement(m);
    for (std::size_t i = 0; i < w.rows(); ++i)
      for (std::size_t j = 0; j < w.cols(); ++j)
        worst_id = std::max(worst_id, std::abs(w(i, j) - (i == j ? 1.0 : 0.0)));
  }
  return {worst < 1e-8 && worst_id < 1e-12,
          fmt("20 models K=3 D=5, max rel Frobenius %.2e (< 1e-8), max |W*(q=p) - I| %.2e (< 1e-12)",
              worst, worst_id)};
}

Outcome mean_centering_recovery() {
  const auto shifted_cfg = load_config(source("configs/toy.json"));
  auto clean_cfg = shifted_cfg;
  clean_cfg.benchmark.test_shift.assign(shifted_cfg.input_dim(), 0.0);
  double norm = 0.0;
  for (double v : shifted_cfg.benchmark.test_shift)
    norm += v * v;
  norm = std::sqrt(norm);
  const Prepared p = prepare(shifted_cfg, std::nullopt);

  std::vector<RunKey> keys;
  for (std::uint64_t s : shifted_cfg.seeds)
    for (Method m : {Method::noadapt, Method::bnadapt})
      keys.push_back({m, false, 0, s});
  const auto shifted = run_all(shifted_cfg, p, keys);
  std::vector<RunKey> clean_keys;
  for (std::uint64_t s : shifted_cfg.seeds)
    clean_keys.push_back({Method::noadapt, false, 0, s});
  const auto clean = run_all(clean_cfg, p, clean_keys);

  std::vector<double> eval, noadapt, bnadapt;
  for (const auto &r : clean)
    eval.push_back(100.0 * r.result.value().accuracy);
  for (const auto &r : shifted)
    (r.key.method == Method::noadapt ? noadapt : bnadapt)
        .push_back(100.0 * r.result.value().accuracy);
  const double e = mean(eval), na = mean(noadapt), bn = mean(bnadapt);
  const bool ok = std::abs(bn - e) <= 1.0 && e - na >= 10.0 &&
                  std::abs(norm - 2 * shifted_cfg.benchmark.sigma) < 1e-12 &&
                  shifted_cfg.seeds.size() == 4;
  return {ok, fmt("|Delta| = %.2f = 2 sigma, 4 seeds: no-shift eval %.2f, BNAdapt %.2f "
                  "(|gap| %.2f <= 1.0), NoAdapt %.2f (loss %.2f >= 10)",
                  norm, e, bn, std::abs(bn - e), na, e - na)};
}

Outcome long_tail_trend() {
  const auto t0 = Clock::now();
  const auto cfg = load_config(source("configs/default.json"));
  const Prepared p = prepare(cfg, Variant::unified);
  const auto rows = summarize(cfg, run_all(cfg, p, run_grid(cfg)));
  const double secs = seconds_since(t0);
  std::map<std::pair<bool, double>, double> bn;
  std::size_t failed = 0;
  for (const auto &r : rows) {
    failed += r.failures.size();
    if (r.method == Method::bnadapt)
      bn[{r.dart, r.shift_value}] = r.mean;
  }
  const double b1 = bn[{false, 1}], b10 = bn[{false, 10}], b100 = bn[{false, 100}];
  const double d1 = bn[{true, 1}], d100 = bn[{true, 100}];
  const bool a = b1 > b10 && b10 > b100;
  const bool b = d100 - b100 >= 5.0;
  const bool c = std::abs(d1 - b1) <= 1.0;
  return {a && b && c && failed == 0 && secs < 600.0,
          fmt("BNAdapt %.1f/%.1f/%.1f at rho 1/10/100 (monotone: %s); "
              "DART gain at rho=100 %+.1f (>= 5.0); at rho=1 %+.1f (|.| <= 1.0); "
              "%zu failed runs; %.0f s (< 600 s)",
              b1, b10, b100, a ? "yes" : "no", d100 - b100, d1 - b1, failed, secs)};
}

struct OnlineSetup {
  ExperimentConfig cfg;
  Prepared prepared;
};

OnlineSetup &online_setup() {
  static OnlineSetup s = [] {
    OnlineSetup o;
    o.cfg = load_config(source("configs/online_split.json"));
    o.prepared = prepare(o.cfg, Variant::split);
    return o;
  }();
  return s;
}

Outcome deviation_trend() {
  auto &o = online_setup();
  const auto &cfg = o.cfg;
  std::vector<RunKey> keys;
  for (std::size_t i = 0; i < cfg.shift.values.size(); ++i)
    for (std::uint64_t s : cfg.seeds)
      keys.push_back({Method::bnadapt, false, i, s});
  std::vector<std::vector<double>> d(cfg.shift.values.size());
  for (const auto &r : run_all(cfg, o.prepared, keys))
    for (const auto &b : r.result.value().trace)
      d[r.key.shift_index].push_back(b.d);
  bool ok = cfg.seeds.size() == 4;
  std::string detail = "mean d_B";
  for (std::size_t i = 0; i < d.size(); ++i)
    detail += fmt(" IR=%g: %.3f", cfg.shift.values[i], mean(d[i]));
  detail += "; separation in pooled SE:";
  for (std::size_t i = 0; i + 1 < d.size(); ++i) {
    const double se = std::sqrt(sample_var(d[i]) / double(d[i].size()) +
                                sample_var(d[i + 1]) / double(d[i + 1].size()));
    const double sep = (mean(d[i]) - mean(d[i + 1])) / se;
    ok = ok && sep >= 2.0;
    detail += fmt(" %.1f", sep);
  }
  return {ok, detail + " (each >= 2)"};
}

Outcome gradient_checks() {
  double worst = 0.0;
  const std::size_t K = 10, H = 32;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng = make_rng(seed, 77);
    RefinerUnified r(K, H, seed);
    for (int checkpoint = 0; checkpoint < 3; ++checkpoint) {
      // Move away from the identity head before each checkpoint.
      testing::perturb(r.net().params(), rng, 0.05 * (checkpoint + 1));
      const Matrix li = testing::random_matrix(64, K, rng, 3.0);
      const Matrix lb = testing::random_matrix(64, K, rng, 3.0);
      const auto y = testing::random_labels(64, K, rng);
      worst = std::max(worst, testing::unified_grad_error(r, li, y, lb, 0.1));
    }
  }
  return {worst < 1e-4,
          fmt("5 seeds x 3 checkpoints, K=%zu H=%zu, max relative error %.2e (< 1e-4)",
              K, H, worst)};
}

Outcome split_gate() {
  auto &o = online_setup();
  const auto &cfg = o.cfg;
  const std::size_t balanced = 0, severe = cfg.shift.values.size() - 1;
  std::size_t closed = 0, n_bal = 0, open = 0, n_sev = 0, negative = 0;
  for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
    const auto &model = o.prepared.models[i];
    const auto &split = std::get<RefinerSplit>(o.prepared.refiners[i]);
    negative += split.detector().weight(0, 0) < 0.0;
    for (auto [index, is_severe] : {std::pair{balanced, false}, std::pair{severe, true}}) {
      const auto stream = test_stream(cfg, index, cfg.seeds[i]);
      for (const auto &b : stream.batches) {
        if (b.labels.size() < 2)
          continue;
        const double s = split.severity(
            batch_signature(model, b.features, cfg.adapt.logit_scale).d);
        if (is_severe) {
          open += s > 0.5;
          ++n_sev;
        } else {
          closed += s < 0.5;
          ++n_bal;
        }
      }
    }
  }
  const double fb = double(closed) / double(n_bal), fs_ = double(open) / double(n_sev);
  return {fb >= 0.95 && fs_ >= 0.95 && cfg.shift.values[severe] == 5000.0 &&
              cfg.shift.values[balanced] == 1.0,
          fmt("s_B < 0.5 on %.1f%% of %zu balanced batches, s_B > 0.5 on %.1f%% of %zu "
              "IR=5000 batches (both >= 95%%); detector slope negative for %zu/%zu seeds",
              100 * fb, n_bal, 100 * fs_, n_sev, negative, cfg.seeds.size())};
}

Outcome temperature_identity() {
  Rng rng = make_rng(9);
  std::uniform_real_distribution<double> u(0.5, 8.0), l(-20.0, 20.0);
  double worst_id = 0.0, worst_scale = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t K = 2 + static_cast<std::size_t>(t % 99);
    const std::size_t m = 1 + t % 7;
    std::vector<double> mx(m), sm(m);
    for (std::size_t i = 0; i < m; ++i) {
      mx[i] = u(rng);
      sm[i] = l(rng);
    }
    const double M = mean(mx), L = mean(sm);
    const auto id = temperature_for_batch(M, L, mx, sm, K);
    if (!id.degenerate)
      worst_id = std::max(worst_id, std::abs(id.T - 1.0));
  }
  // Homogeneity at a fixed training statistic.
  for (int t = 0; t < 1000; ++t) {
    const std::size_t K = 2 + static_cast<std::size_t>(t % 99);
    const double M_tr = u(rng);
    std::vector<double> mx(4), zero(4, 0.0);
    for (double &v : mx)
      v = u(rng);
    const double c = u(rng);
    std::vector<double> scaled(mx);
    for (double &v : scaled)
      v *= c;
    const auto a = temperature_for_batch(M_tr, 0.0, mx, zero, K);
    const auto b = temperature_for_batch(M_tr, 0.0, scaled, zero, K);
    if (a.degenerate || b.degenerate)
      continue;
    worst_scale = std::max(worst_scale, std::abs(b.T - c * a.T) / std::max(1.0, std::abs(c * a.T)));
  }
  return {worst_id <= 1e-12 && worst_scale <= 1e-12,
          fmt("1000 random cases each: max |T - 1| %.1e, max scaling residual %.1e (both <= 1e-12)",
              worst_id, worst_scale)};
}

Outcome frozen_classifier() {
  const auto cfg = load_config(source("configs/toy.json"));
  const std::uint64_t seed = cfg.seeds.front();
  MlpClassifier model = pretrain_model(cfg, seed).model;
  const auto learnable = model.learnable_snapshot();
  bool ok = true;
  std::string detail;

  train_refiner(cfg, model, Variant::unified, seed);
  train_refiner(cfg, model, Variant::split, seed);
  const bool inter = same_bytes(model.learnable_snapshot(), learnable);
  detail += fmt("intermediate training unchanged: %s", inter ? "yes" : "no");

  const auto stream = test_stream(cfg, 0, seed);
  for (const auto &b : stream.batches)
    bn_adapt_forward(model, b.features);
  const bool bn = same_bytes(model.learnable_snapshot(), learnable);
  detail += fmt("; BNAdapt unchanged: %s", bn ? "yes" : "no");
  ok = inter && bn;

  const auto non_bn = snapshot(model.params(), false);
  const auto bn_affine = snapshot(model.params(), true);
  for (Method m : {Method::tent, Method::pl}) {
    MlpClassifier work = model;
    Optimizer opt(cfg.adapt.optimizer);
    std::size_t used = 0;
    for (const auto &b : stream.batches) {
      if (m == Method::tent) {
        tent_step(work, b.features, nullptr, opt);
        ++used;
      } else {
        used += pl_step(work, b.features, nullptr, opt, cfg.adapt.pl_threshold);
      }
    }
    const bool others = same_bytes(snapshot(work.params(), false), non_bn);
    const bool moved = !same_bytes(snapshot(work.params(), true), bn_affine);
    ok = ok && others && moved && used > 0;
    detail += fmt("; %s: non-BN unchanged %s, BN affine updated %s",
                  m == Method::tent ? "TENT" : "PL", others ? "yes" : "no",
                  moved ? "yes" : "no");
  }
  return {ok, detail};
}

Outcome determinism() {
  const fs::path base = fs::temp_directory_path() / "shiftlab_acceptance_determinism";
  fs::remove_all(base);
  fs::create_directories(base);
  Json cfg = read_json_file(source("configs/default.json"));
  cfg["benchmark"]["train_size"] = 2000;
  cfg["benchmark"]["intermediate_size"] = 2000;
  cfg["pretrain"]["epochs"] = 3;
  cfg["intermediate"]["epochs"] = 2;
  cfg["intermediate"]["hidden"] = 32;
  cfg["shift"]["head_size"] = 200;
  cfg["seeds"] = Json::array({0, 1});
  write_json_file(base / "config.json", cfg);
  Json tv = read_json_file(source("configs/toy_verify.json"));
  tv["monte_carlo"]["samples_per_class"] = 50000;
  write_json_file(base / "toy_verify.json", tv);

  const std::string c = " --config " + (base / "config.json").string();
  const std::string tvc = " --config " + (base / "toy_verify.json").string();
  bool ok = true;
  std::size_t commands = 0;
  std::string detail;
  for (const char *run : {"a", "b"}) {
    const fs::path r = base / run;
    const std::vector<std::pair<std::string, std::string>> steps = {
        {"pretrain", "pretrain" + c + " --out " + (r / "staged").string()},
        {"intermediate", "intermediate" + c + " --out " + (r / "staged").string()},
        {"intermediate split",
         "intermediate --variant split" + c + " --model " +
             (r / "staged" / "model.json").string() + " --out " + (r / "split").string()},
        {"adapt", "adapt" + c + " --out " + (r / "staged").string()},
        {"sweep", "sweep" + c + " --out " + (r / "sweep").string()},
        {"toy-verify", "toy-verify" + tvc + " --out " + (r / "toy").string()}};
    commands = steps.size();
    for (const auto &[name, args] : steps) {
      const int code = testing::run_cli(args);
      if (code != 0) {
        ok = false;
        detail += fmt("%s exited %d; ", name.c_str(), code);
      }
    }
  }
  const auto a = testing::tree_bytes(base / "a");
  const auto b = testing::tree_bytes(base / "b");
  const std::size_t files = a.size();
  std::size_t differing = 0;
  for (const auto &[k, v] : a) {
    auto it = b.find(k);
    differing += it == b.end() || it->second != v;
  }
  ok = ok && a.size() == b.size() && differing == 0 && files > 0;
  fs::remove_all(base);
  return {ok, detail + fmt("%zu commands run twice, %zu output files, %zu differ",
                           commands, files, differing)};
}

} // namespace

int main() {
  const auto t0 = Clock::now();
  report(1, "closed-form confusion vs Monte Carlo", closed_form_vs_monte_carlo());
  report(2, "properties #1-#3 on the default grid", properties_on_grid());
  report(3, "optimal refinement vs least-squares oracle", optimal_refinement_oracle());
  report(4, "mean-centering recovery under covariate shift", mean_centering_recovery());
  report(5, "long-tail trend and DART gain", long_tail_trend());
  report(6, "prediction deviation decreases with imbalance", deviation_trend());
  report(7, "refiner gradient correctness", gradient_checks());
  report(8, "split severity gate", split_gate());
  report(9, "temperature identities", temperature_identity());
  report(10, "frozen-classifier contracts", frozen_classifier());
  report(11, "byte-identical repeated commands", determinism());
  std::printf("%d of 11 criteria failed (%.0f s)\n", failures, seconds_since(t0));
  return failures == 0 ? 0 : 1;
}
