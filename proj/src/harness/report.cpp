// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <map>
#include <sstream>

#include "shiftlab/harness.hpp"

namespace shiftlab::harness {

namespace {

std::string fmt_g17(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string fmt_shift(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

} // namespace

std::string provenance_line(const std::string &hash, std::uint64_t seed) {
  return "# config_hash=" + hash + " seed=" + std::to_string(seed) + "\n";
}

std::string loss_curve_csv(const std::string &hash, std::uint64_t seed,
                           const std::vector<LossRecord> &curve) {
  std::string out = provenance_line(hash, seed);
  out += "iteration,l_imb,l_bal,total\n";
  for (const LossRecord &r : curve)
    out += std::to_string(r.iteration) + "," + fmt_g17(r.l_imb) + "," +
           fmt_g17(r.l_bal) + "," + fmt_g17(r.total) + "\n";
  return out;
}

Json run_record_json(const ExperimentConfig &cfg, const RunRecord &run) {
  Json j = {{"format", "shiftlab-run/1"},
            {"config_hash", cfg.hash},
            {"seed", run.key.seed},
            {"run", run.hash},
            {"method", std::string(to_string(run.key.method))},
            {"dart", run.key.dart},
            {"variant", std::string(to_string(cfg.variant))},
            {"shift_kind", std::string(to_string(cfg.shift.kind))},
            {"shift_value", cfg.shift.values.at(run.key.shift_index)}};
  if (!cfg.inputs.empty())
    j["inputs"] = cfg.inputs;
  if (run.result)
    j["result"] = run_result_to_json(*run.result);
  else
    j["error"] = run.error;
  return j;
}

std::vector<SummaryRow> summarize(const ExperimentConfig &cfg,
                                  const std::vector<RunRecord> &runs) {
  std::vector<SummaryRow> rows;
  std::map<std::tuple<int, bool, std::size_t>, std::size_t> index;
  for (Method m : cfg.methods)
    for (bool dart : cfg.dart)
      for (std::size_t s = 0; s < cfg.shift.values.size(); ++s) {
        index[{static_cast<int>(m), dart, s}] = rows.size();
        SummaryRow row;
        row.method = m;
        row.dart = dart;
        row.shift_value = cfg.shift.values[s];
        rows.push_back(row);
      }
  for (const RunRecord &run : runs) {
    auto it = index.find(
        {static_cast<int>(run.key.method), run.key.dart, run.key.shift_index});
    if (it == index.end())
      continue;
    SummaryRow &row = rows[it->second];
    if (run.result) {
      row.accuracies.push_back(100.0 * run.result->accuracy);
      row.runs.push_back(run.hash);
    } else {
      row.failures.push_back("seed " + std::to_string(run.key.seed) + ": " +
                             run.error);
    }
  }
  for (SummaryRow &row : rows) {
    const std::size_t n = row.accuracies.size();
    if (n == 0)
      continue;
    double sum = 0.0;
    for (double a : row.accuracies)
      sum += a;
    row.mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (double a : row.accuracies)
      ss += (a - row.mean) * (a - row.mean);
    row.std = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
  }
  return rows;
}

Json summary_to_json(const ExperimentConfig &cfg,
                     const std::vector<SummaryRow> &rows) {
  Json jr = Json::array();
  for (const SummaryRow &r : rows)
    jr.push_back({{"method", std::string(to_string(r.method))},
                  {"dart", r.dart},
                  {"shift_value", r.shift_value},
                  {"mean", r.accuracies.empty() ? Json(nullptr) : Json(r.mean)},
                  {"std", r.accuracies.empty() ? Json(nullptr) : Json(r.std)},
                  {"seeds", r.accuracies.size()},
                  {"accuracies", r.accuracies},
                  {"runs", r.runs},
                  {"failures", r.failures}});
  return {{"format", "shiftlab-summary/1"},
          {"config_hash", cfg.hash},
          {"seeds", cfg.seeds},
          {"variant", std::string(to_string(cfg.variant))},
          {"shift_kind", std::string(to_string(cfg.shift.kind))},
          {"config", cfg.canonical},
          {"inputs", cfg.inputs},
          {"rows", jr}};
}

std::string summary_text(const ExperimentConfig &cfg,
                         const std::vector<SummaryRow> &rows) {
  const std::string shift_name =
      cfg.shift.kind == ShiftKind::long_tail
          ? "rho"
          : cfg.shift.kind == ShiftKind::online_imbalance ? "IR" : "shift";
  std::ostringstream os;
  os << "# config_hash=" << cfg.hash << " seeds=";
  for (std::size_t i = 0; i < cfg.seeds.size(); ++i)
    os << (i ? "," : "") << cfg.seeds[i];
  os << "\n";
  os << std::left << std::setw(16) << "method";
  for (double v : cfg.shift.values)
    os << std::right << std::setw(16) << (shift_name + "=" + fmt_shift(v));
  os << "\n";
  for (Method m : cfg.methods)
    for (bool dart : cfg.dart) {
      std::string label = std::string(to_string(m)) + (dart ? "+dart" : "");
      os << std::left << std::setw(16) << label;
      for (const SummaryRow &r : rows) {
        if (r.method != m || r.dart != dart)
          continue;
        std::ostringstream cell;
        if (r.accuracies.empty())
          cell << "failed";
        else
          cell << std::fixed << std::setprecision(1) << r.mean << " +- "
               << r.std;
        os << std::right << std::setw(16) << cell.str();
      }
      os << "\n";
    }
  return os.str();
}

void write_results(const ExperimentConfig &cfg, const fs::path &dir,
                   const std::vector<RunRecord> &runs) {
  fs::create_directories(dir);
  for (const RunRecord &run : runs) {
    write_json_file(dir / ("run_" + run.hash + ".json"),
                    run_record_json(cfg, run));
    if (run.result)
      write_text_file(dir / ("confusion_" + run.hash + ".csv"),
                      provenance_line(cfg.hash, run.key.seed) +
                          confusion_csv(run.result->confusion));
  }
  const auto rows = summarize(cfg, runs);
  write_json_file(dir / "summary.json", summary_to_json(cfg, rows));
  write_text_file(dir / "summary.txt", summary_text(cfg, rows));
}

// ---- toy verification -----------------------------------------------------

double faulty_normal_cdf(double x) { return 1.0 / (1.0 + std::exp(-1.702 * x)); }

bool ToyVerifyReport::ok() const noexcept {
  for (const auto &c : checks)
    if (!c.passed)
      return false;
  return !checks.empty();
}

ToyVerifyReport run_toy_verify(const ToyVerifyConfig &cfg,
                               const NormalCdf &cdf) {
  ToyVerifyReport report;

  {
    CheckResult c{"closed_form_vs_monte_carlo", true, Json::array()};
    const double n = static_cast<double>(cfg.mc_samples);
    for (const MonteCarloCase &mc : cfg.cases) {
      const Matrix cf = closed_form_confusion(mc.params, cdf);
      const Matrix emp =
          monte_carlo_confusion(mc.params, cfg.mc_samples, mc.seed);
      double worst = 0.0;
      std::size_t bad = 0;
      for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
          const double p = std::clamp(cf(i, j), 0.0, 1.0);
          const double se = std::max(std::sqrt(p * (1.0 - p) / n), 0.5 / n);
          const double z = std::abs(emp(i, j) - cf(i, j)) / se;
          worst = std::max(worst, z);
          bad += z > cfg.mc_sigmas;
        }
      c.passed = c.passed && bad == 0;
      c.detail.push_back({{"p", mc.params.p},
                          {"beta", mc.params.beta},
                          {"sigma", mc.params.sigma},
                          {"seed", mc.seed},
                          {"cells_outside", bad},
                          {"max_standard_errors", worst}});
    }
    report.checks.push_back(std::move(c));
  }
  {
    CheckResult c{"rows_sum_to_one", true, Json::object()};
    double worst = 0.0;
    for (const MonteCarloCase &mc : cfg.cases) {
      const Matrix cf = closed_form_confusion(mc.params, cdf);
      for (std::size_t i = 0; i < 4; ++i) {
        double s = 0.0;
        for (double v : cf.row(i))
          s += v;
        worst = std::max(worst, std::abs(s - 1.0));
      }
    }
    c.passed = worst <= 1e-10;
    c.detail["max_deviation"] = worst;
    report.checks.push_back(std::move(c));
  }
  {
    const PropertyReport pr = verify_properties(cfg.grid, cdf);
    CheckResult c{"properties", pr.ok(),
                  property_report_to_json(cfg.grid, pr)};
    report.checks.push_back(std::move(c));
  }
  {
    CheckResult c{"optimal_refinement_oracle", true, Json::object()};
    Rng rng = make_rng(cfg.centroid_seed, 77);
    double worst_rel = 0.0, worst_identity = 0.0;
    std::size_t failures = 0;
    Json errors = Json::array();
    for (std::size_t m = 0; m < cfg.centroid_models; ++m) {
      CentroidModel model =
          random_centroid_model(cfg.centroid_classes, cfg.centroid_dim, rng);
      try {
        const Matrix w = optimal_refinement(model);
        const Matrix o = least_squares_refinement_oracle(model);
        const double rel = frobenius_norm(w - o) / frobenius_norm(o);
        worst_rel = std::max(worst_rel, rel);
        failures += !(rel < cfg.wstar_tolerance);
        model.q_test = model.p_train;
        const Matrix id = optimal_refinement(model);
        const Matrix eye = Matrix::identity(cfg.centroid_classes);
        for (std::size_t i = 0; i < id.data().size(); ++i)
          worst_identity = std::max(
              worst_identity, std::abs(id.data()[i] - eye.data()[i]));
      } catch (const std::exception &e) {
        ++failures;
        errors.push_back(e.what());
      }
    }
    c.passed = failures == 0 && worst_identity <= cfg.identity_tolerance;
    c.detail = {{"models", cfg.centroid_models},
                {"max_relative_frobenius", worst_rel},
                {"max_identity_deviation", worst_identity},
                {"failures", failures},
                {"errors", errors}};
    report.checks.push_back(std::move(c));
  }
  return report;
}

Json toy_report_to_json(const ToyVerifyConfig &cfg,
                        const ToyVerifyReport &report) {
  Json checks = Json::array();
  for (const CheckResult &c : report.checks)
    checks.push_back(
        {{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
  return {{"format", "shiftlab-toy-report/1"},
          {"config_hash", cfg.hash},
          {"params", cfg.canonical},
          {"checks", checks},
          {"passed", report.ok()}};
}

} // namespace shiftlab::harness
