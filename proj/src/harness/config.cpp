// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <set>

#include "shiftlab/harness.hpp"

namespace shiftlab::harness {

ConfigError::ConfigError(const std::string &what,
                         std::vector<std::string> fields)
    : std::runtime_error([&] {
        std::string msg = what;
        for (const auto &f : fields)
          msg += "\n  " + f;
        return msg;
      }()),
      fields_(std::move(fields)) {}

Variant parse_variant(std::string_view name) {
  if (name == "unified")
    return Variant::unified;
  if (name == "split")
    return Variant::split;
  throw ConfigError("unknown variant '" + std::string(name) + "'",
                    {"variant"});
}

std::string_view to_string(Variant v) noexcept {
  return v == Variant::unified ? "unified" : "split";
}

std::string_view to_string(ShiftKind k) noexcept {
  switch (k) {
  case ShiftKind::none:
    return "none";
  case ShiftKind::long_tail:
    return "long_tail";
  case ShiftKind::online_imbalance:
    return "online_imbalance";
  }
  return "?";
}

std::size_t ExperimentConfig::classes() const noexcept {
  return benchmark.kind == BenchmarkKind::toy ? 4 : benchmark.classes;
}

std::size_t ExperimentConfig::input_dim() const noexcept {
  return benchmark.kind == BenchmarkKind::toy ? 2 : benchmark.dim;
}

namespace {

// Parsed text stores non-negative integers as unsigned; built values may
// carry them as signed.
bool is_count(const Json &v) {
  return v.is_number_unsigned() ||
         (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

// Reads one JSON object, remembering consumed keys and collecting every
// problem instead of stopping at the first.
class Reader {
public:
  Reader(const Json *j, std::string path, std::vector<std::string> &errors)
      : j_(j), path_(std::move(path)), errors_(errors) {
    if (j_ && !j_->is_object()) {
      fail("", "must be an object");
      j_ = nullptr;
    }
  }

  void fail(const std::string &key, const std::string &msg) {
    errors_.push_back(where(key) + ": " + msg);
  }

  const Json *find(const char *key) {
    seen_.insert(key);
    if (!j_)
      return nullptr;
    auto it = j_->find(key);
    return it == j_->end() ? nullptr : &*it;
  }

  Reader child(const char *key) {
    return Reader(find(key), where(key), errors_);
  }

  double number(const char *key, double def,
                const std::function<bool(double)> &ok, const char *rule) {
    const Json *v = find(key);
    if (!v)
      return def;
    if (!v->is_number()) {
      fail(key, "must be a number");
      return def;
    }
    const double x = v->get<double>();
    if (!std::isfinite(x) || !ok(x)) {
      fail(key, rule);
      return def;
    }
    return x;
  }

  std::size_t count(const char *key, std::size_t def, std::size_t min) {
    const Json *v = find(key);
    if (!v)
      return def;
    if (!is_count(*v) || v->get<std::size_t>() < min) {
      fail(key, "must be an integer >= " + std::to_string(min));
      return def;
    }
    return v->get<std::size_t>();
  }

  bool flag(const char *key, bool def) {
    const Json *v = find(key);
    if (!v)
      return def;
    if (!v->is_boolean()) {
      fail(key, "must be true or false");
      return def;
    }
    return v->get<bool>();
  }

  std::string text(const char *key, std::string def) {
    const Json *v = find(key);
    if (!v)
      return def;
    if (!v->is_string()) {
      fail(key, "must be a string");
      return def;
    }
    return v->get<std::string>();
  }

  template <class T, class Parse>
  std::vector<T> list(const char *key, std::vector<T> def, Parse parse,
                      bool allow_empty = false) {
    const Json *v = find(key);
    if (!v)
      return def;
    if (!v->is_array() || (!allow_empty && v->empty())) {
      fail(key, allow_empty ? "must be an array" : "must be a non-empty array");
      return def;
    }
    std::vector<T> out;
    for (std::size_t i = 0; i < v->size(); ++i) {
      std::optional<T> x = parse((*v)[i]);
      if (!x) {
        fail(std::string(key) + "[" + std::to_string(i) + "]", "invalid entry");
        return def;
      }
      out.push_back(*x);
    }
    return out;
  }

  void finish() {
    if (!j_)
      return;
    for (auto it = j_->begin(); it != j_->end(); ++it)
      if (!seen_.count(it.key()))
        fail(it.key(), "unknown field");
  }

  bool present() const noexcept { return j_ != nullptr; }

private:
  std::string where(const std::string &key) const {
    if (key.empty())
      return path_.empty() ? "<root>" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

  const Json *j_;
  std::string path_;
  std::vector<std::string> &errors_;
  std::set<std::string> seen_;
};

auto positive = [](double x) { return x > 0.0; };
auto non_negative = [](double x) { return x >= 0.0; };

std::optional<double> as_number(const Json &v) {
  if (!v.is_number() || !std::isfinite(v.get<double>()))
    return std::nullopt;
  return v.get<double>();
}

void read_intermediate(Reader &r, IntermediateConfig &c) {
  c.alpha = r.number("alpha", c.alpha, non_negative, "must be >= 0");
  c.epochs = r.count("epochs", c.epochs, 0);
  c.batch_size = r.count("batch_size", c.batch_size, 2);
  c.delta = r.number("delta", c.delta, positive, "must be > 0");
  c.n_chunks = r.count("n_chunks", c.n_chunks, 1);
  c.learning_rate =
      r.number("learning_rate", c.learning_rate, positive, "must be > 0");
  c.cosine = r.flag("cosine", c.cosine);
  c.hidden = r.count("hidden", c.hidden, 1);
  c.detect_learning_rate = r.number("detect_learning_rate",
                                    c.detect_learning_rate, positive,
                                    "must be > 0");
  c.refine_learning_rate = r.number("refine_learning_rate",
                                    c.refine_learning_rate, positive,
                                    "must be > 0");
  c.diagonal = r.flag("diagonal", c.diagonal);
  c.logit_scale =
      r.number("logit_scale", c.logit_scale, positive, "must be > 0");
}

Json intermediate_json(const IntermediateConfig &c) {
  return {{"alpha", c.alpha},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"delta", c.delta},
          {"n_chunks", c.n_chunks},
          {"learning_rate", c.learning_rate},
          {"cosine", c.cosine},
          {"hidden", c.hidden},
          {"detect_learning_rate", c.detect_learning_rate},
          {"refine_learning_rate", c.refine_learning_rate},
          {"diagonal", c.diagonal},
          {"logit_scale", c.logit_scale}};
}

template <class Fn> auto enum_or(Reader &r, const char *key, Fn parse,
                                 decltype(parse("")) def) {
  const std::string name = r.text(key, "");
  if (name.empty())
    return def;
  try {
    return parse(name);
  } catch (const std::exception &) {
    r.fail(key, "unknown value '" + name + "'");
    return def;
  }
}

} // namespace

ExperimentConfig parse_config(const Json &j) {
  std::vector<std::string> errors;
  ExperimentConfig c;
  Reader root(&j, "", errors);

  {
    Reader b = root.child("benchmark");
    BenchmarkConfig &bc = c.benchmark;
    bc.kind = enum_or(
        b, "kind",
        [](std::string_view s) {
          if (s == "paired")
            return BenchmarkKind::paired;
          if (s == "toy")
            return BenchmarkKind::toy;
          throw std::invalid_argument("kind");
        },
        bc.kind);
    bc.classes = b.count("classes", bc.classes, 2);
    bc.dim = b.count("dim", bc.dim, 1);
    bc.sigma = b.number("sigma", bc.sigma, positive, "must be > 0");
    bc.separation =
        b.number("separation", bc.separation, non_negative, "must be >= 0");
    bc.spread = b.number("spread", bc.spread, non_negative, "must be >= 0");
    bc.d = b.number("d", bc.d, positive, "must be > 0");
    bc.beta = b.number(
        "beta", bc.beta, [](double x) { return x > 1.0; }, "must be > 1");
    bc.p = b.number(
        "p", bc.p, [](double x) { return x >= 0.25 && x < 0.5; },
        "must lie in [0.25, 0.5)");
    bc.test_shift = b.list<double>("test_shift", {}, as_number, true);
    bc.train_size = b.count("train_size", bc.train_size, 1);
    bc.intermediate_size =
        b.count("intermediate_size", bc.intermediate_size, 1);
    b.finish();
    if (bc.kind == BenchmarkKind::paired &&
        bc.dim < 2 * (bc.classes / 2) + bc.classes % 2)
      b.fail("dim", "too small for the paired layout of this many classes");
    const std::size_t dim = bc.kind == BenchmarkKind::toy ? 2 : bc.dim;
    if (bc.test_shift.empty())
      bc.test_shift.assign(dim, 0.0);
    else if (bc.test_shift.size() != dim)
      b.fail("test_shift", "must have one entry per input dimension");
  }
  {
    Reader m = root.child("model");
    c.hidden = m.list<std::size_t>(
        "hidden", c.hidden,
        [](const Json &v) -> std::optional<std::size_t> {
          if (!is_count(v) || v.get<std::size_t>() == 0)
            return std::nullopt;
          return v.get<std::size_t>();
        },
        true);
    m.finish();
  }
  {
    Reader p = root.child("pretrain");
    PretrainConfig &pc = c.pretrain;
    pc.epochs = p.count("epochs", pc.epochs, 0);
    pc.batch_size = p.count("batch_size", pc.batch_size, 2);
    pc.optimizer.kind =
        enum_or(p, "optimizer", parse_optimizer_kind, pc.optimizer.kind);
    pc.optimizer.learning_rate = p.number(
        "learning_rate", pc.optimizer.learning_rate, positive, "must be > 0");
    pc.optimizer.cosine = p.flag("cosine", true);
    pc.accuracy_floor = p.number(
        "accuracy_floor", pc.accuracy_floor,
        [](double x) { return x >= 0.0 && x <= 1.0; }, "must lie in [0, 1]");
    p.finish();
  }
  {
    Reader r = root.child("intermediate");
    read_intermediate(r, c.intermediate);
    c.split_intermediate = c.intermediate;
    Reader s = r.child("split");
    if (s.present())
      read_intermediate(s, c.split_intermediate);
    s.finish();
    r.finish();
  }
  {
    Reader a = root.child("adapt");
    AdaptConfig &ac = c.adapt;
    c.methods = a.list<Method>(
        "methods", c.methods, [](const Json &v) -> std::optional<Method> {
          try {
            return parse_method(v.get<std::string>());
          } catch (const std::exception &) {
            return std::nullopt;
          }
        });
    c.dart = a.list<bool>("dart", c.dart,
                          [](const Json &v) -> std::optional<bool> {
                            if (!v.is_boolean())
                              return std::nullopt;
                            return v.get<bool>();
                          });
    ac.optimizer.kind =
        enum_or(a, "optimizer", parse_optimizer_kind, ac.optimizer.kind);
    ac.optimizer.learning_rate = a.number(
        "learning_rate", ac.optimizer.learning_rate, positive, "must be > 0");
    ac.pl_threshold = a.number(
        "pl_threshold", ac.pl_threshold,
        [](double x) { return x > 0.0 && x <= 1.0 + 1e-12; },
        "must lie in (0, 1]");
    ac.batch_size = a.count("batch_size", ac.batch_size, 1);
    ac.logit_scale =
        a.number("logit_scale", ac.logit_scale, positive, "must be > 0");
    a.finish();
  }
  {
    Reader s = root.child("shift");
    ShiftConfig &sc = c.shift;
    sc.kind = enum_or(
        s, "kind",
        [](std::string_view k) {
          if (k == "none")
            return ShiftKind::none;
          if (k == "long_tail")
            return ShiftKind::long_tail;
          if (k == "online_imbalance")
            return ShiftKind::online_imbalance;
          throw std::invalid_argument("kind");
        },
        sc.kind);
    sc.values = s.list<double>(
        "values", sc.kind == ShiftKind::none ? std::vector<double>{1.0}
                                             : sc.values,
        [](const Json &v) -> std::optional<double> {
          auto x = as_number(v);
          if (!x || *x < 1.0)
            return std::nullopt;
          return x;
        });
    sc.head_size = s.count("head_size", sc.head_size, 1);
    sc.inverse = s.flag("inverse", sc.inverse);
    sc.subset_size = s.count("subset_size", sc.subset_size, 1);
    sc.pool_size = s.count("pool_size", sc.pool_size, 1);
    s.finish();
  }
  c.seeds = root.list<std::uint64_t>(
      "seeds", c.seeds, [](const Json &v) -> std::optional<std::uint64_t> {
        if (!is_count(v))
          return std::nullopt;
        return v.get<std::uint64_t>();
      });
  c.variant = enum_or(root, "variant", parse_variant, c.variant);
  c.threads = root.count("threads", c.threads, 0);
  c.output_dir = root.text("output_dir", c.output_dir);
  root.finish();

  if (!errors.empty())
    throw ConfigError("invalid configuration:", errors);

  const BenchmarkConfig &bc = c.benchmark;
  Json methods = Json::array();
  for (Method m : c.methods)
    methods.push_back(std::string(to_string(m)));
  Json dart = Json::array();
  for (bool b : c.dart)
    dart.push_back(b);
  // Everything that can change a result; threads and output_dir cannot.
  c.canonical = {
      {"benchmark",
       {{"kind", bc.kind == BenchmarkKind::toy ? "toy" : "paired"},
        {"classes", c.classes()},
        {"dim", c.input_dim()},
        {"sigma", bc.sigma},
        {"separation", bc.separation},
        {"spread", bc.spread},
        {"d", bc.d},
        {"beta", bc.beta},
        {"p", bc.p},
        {"test_shift", bc.test_shift},
        {"train_size", bc.train_size},
        {"intermediate_size", bc.intermediate_size}}},
      {"model", {{"hidden", c.hidden}}},
      {"pretrain",
       {{"epochs", c.pretrain.epochs},
        {"batch_size", c.pretrain.batch_size},
        {"optimizer", std::string(to_string(c.pretrain.optimizer.kind))},
        {"learning_rate", c.pretrain.optimizer.learning_rate},
        {"cosine", c.pretrain.optimizer.cosine},
        {"accuracy_floor", c.pretrain.accuracy_floor}}},
      {"intermediate", intermediate_json(c.intermediate)},
      {"split_intermediate", intermediate_json(c.split_intermediate)},
      {"adapt",
       {{"methods", methods},
        {"dart", dart},
        {"optimizer", std::string(to_string(c.adapt.optimizer.kind))},
        {"learning_rate", c.adapt.optimizer.learning_rate},
        {"pl_threshold", c.adapt.pl_threshold},
        {"batch_size", c.adapt.batch_size},
        {"logit_scale", c.adapt.logit_scale}}},
      {"shift",
       {{"kind", std::string(to_string(c.shift.kind))},
        {"values", c.shift.values},
        {"head_size", c.shift.head_size},
        {"inverse", c.shift.inverse},
        {"subset_size", c.shift.subset_size},
        {"pool_size", c.shift.pool_size}}},
      {"seeds", c.seeds},
      {"variant", std::string(to_string(c.variant))}};
  c.hash = fnv1a_hex(c.canonical.dump());
  return c;
}

ExperimentConfig load_config(const fs::path &path) {
  if (!fs::exists(path))
    throw ConfigError("config file not found: " + path.string(), {"--config"});
  Json j;
  try {
    j = read_json_file(path);
  } catch (const std::exception &e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what(),
                      {"--config"});
  }
  return parse_config(j);
}

// ---- toy verification parameters -----------------------------------------

ToyVerifyConfig parse_toy_verify(const Json &j) {
  std::vector<std::string> errors;
  ToyVerifyConfig c;
  Reader root(&j, "", errors);
  {
    Reader g = root.child("grid");
    c.grid.p = g.list<double>("p", c.grid.p, as_number);
    c.grid.beta = g.list<double>("beta", c.grid.beta, as_number);
    c.grid.d = g.number("d", c.grid.d, positive, "must be > 0");
    c.grid.sigma = g.number("sigma", c.grid.sigma, positive, "must be > 0");
    g.finish();
    for (double p : c.grid.p)
      if (!(p >= 0.25 && p < 0.5))
        g.fail("p", "entries must lie in [0.25, 0.5)");
    for (double b : c.grid.beta)
      if (!(b > 1.0))
        g.fail("beta", "entries must be > 1");
  }
  {
    Reader m = root.child("monte_carlo");
    c.mc_samples = m.count("samples_per_class", c.mc_samples, 10000);
    c.mc_sigmas = m.number("sigmas", c.mc_sigmas, positive, "must be > 0");
    const Json *cases = m.find("cases");
    if (cases) {
      if (!cases->is_array() || cases->empty()) {
        m.fail("cases", "must be a non-empty array");
      } else {
        for (std::size_t i = 0; i < cases->size(); ++i) {
          Reader r(&(*cases)[i], "monte_carlo.cases[" + std::to_string(i) + "]",
                   errors);
          MonteCarloCase mc;
          mc.params.d = r.number("d", 1.0, positive, "must be > 0");
          mc.params.beta = r.number(
              "beta", 2.0, [](double x) { return x > 1.0; }, "must be > 1");
          mc.params.sigma = r.number("sigma", 1.0, positive, "must be > 0");
          mc.params.p = r.number(
              "p", 0.25, [](double x) { return x >= 0.25 && x < 0.5; },
              "must lie in [0.25, 0.5)");
          mc.params.delta = r.list<double>("delta", {0.0, 0.0}, as_number);
          if (mc.params.delta.size() != 2)
            r.fail("delta", "must have 2 entries");
          const Json *seed = r.find("seed");
          if (seed && is_count(*seed))
            mc.seed = seed->get<std::uint64_t>();
          else if (seed)
            r.fail("seed", "must be a non-negative integer");
          r.finish();
          c.cases.push_back(mc);
        }
      }
    }
    m.finish();
  }
  {
    Reader w = root.child("optimal_refinement");
    c.centroid_models = w.count("models", c.centroid_models, 1);
    c.centroid_classes = w.count("classes", c.centroid_classes, 2);
    c.centroid_dim = w.count("dim", c.centroid_dim, 1);
    const Json *seed = w.find("seed");
    if (seed && is_count(*seed))
      c.centroid_seed = seed->get<std::uint64_t>();
    else if (seed)
      w.fail("seed", "must be a non-negative integer");
    c.wstar_tolerance =
        w.number("tolerance", c.wstar_tolerance, positive, "must be > 0");
    c.identity_tolerance = w.number("identity_tolerance",
                                    c.identity_tolerance, positive,
                                    "must be > 0");
    w.finish();
    if (c.centroid_dim + 1 < c.centroid_classes)
      w.fail("dim", "must be at least classes - 1");
  }
  root.finish();
  if (!errors.empty())
    throw ConfigError("invalid toy-verify parameters:", errors);

  if (c.cases.empty())
    for (std::uint64_t s = 0; s < 5; ++s)
      c.cases.push_back({ToyParams{1.0, 2.0, 1.0, 0.25 + 0.05 * s, {0, 0}}, s});
  Json cases = Json::array();
  for (const auto &mc : c.cases)
    cases.push_back({{"d", mc.params.d},
                     {"beta", mc.params.beta},
                     {"sigma", mc.params.sigma},
                     {"p", mc.params.p},
                     {"delta", mc.params.delta},
                     {"seed", mc.seed}});
  c.canonical = {
      {"grid",
       {{"p", c.grid.p},
        {"beta", c.grid.beta},
        {"d", c.grid.d},
        {"sigma", c.grid.sigma}}},
      {"monte_carlo",
       {{"samples_per_class", c.mc_samples},
        {"sigmas", c.mc_sigmas},
        {"cases", cases}}},
      {"optimal_refinement",
       {{"models", c.centroid_models},
        {"classes", c.centroid_classes},
        {"dim", c.centroid_dim},
        {"seed", c.centroid_seed},
        {"tolerance", c.wstar_tolerance},
        {"identity_tolerance", c.identity_tolerance}}}};
  c.hash = fnv1a_hex(c.canonical.dump());
  return c;
}

} // namespace shiftlab::harness
