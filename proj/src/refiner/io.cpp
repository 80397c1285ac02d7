// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <fstream>

#include "shiftlab/refiner.hpp"

namespace shiftlab {

namespace {

constexpr const char *kFormat = "dart-refiner/1";

Json params_json(std::vector<Param> params) {
  Json j = Json::object();
  for (const Param &p : params)
    j[p.name] = std::vector<double>(p.value.begin(), p.value.end());
  return j;
}

// Copies named arrays into `params`; every name must be present with the
// exact length.
void load_params(std::vector<Param> params, const Json &j) {
  if (!j.is_object())
    throw RefinerFormatError("refiner: parameters must be an object");
  if (j.size() != params.size())
    throw RefinerFormatError("refiner: unexpected parameter count");
  for (const Param &p : params) {
    auto it = j.find(p.name);
    if (it == j.end() || !it->is_array())
      throw RefinerFormatError("refiner: missing parameter " + p.name);
    if (it->size() != p.value.size())
      throw RefinerFormatError("refiner: wrong length for " + p.name);
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const Json &v = (*it)[i];
      if (!v.is_number())
        throw RefinerFormatError("refiner: non-numeric entry in " + p.name);
      const double x = v.get<double>();
      if (!std::isfinite(x))
        throw RefinerFormatError("refiner: non-finite entry in " + p.name);
      p.value[i] = x;
    }
  }
}

template <class T> T field(const Json &j, const char *name) {
  auto it = j.find(name);
  if (it == j.end())
    throw RefinerFormatError(std::string("refiner: missing field ") + name);
  try {
    return it->get<T>();
  } catch (const Json::exception &) {
    throw RefinerFormatError(std::string("refiner: bad field ") + name);
  }
}

} // namespace

Json refiner_to_json(const Refiner &refiner) {
  Json j;
  j["format"] = kFormat;
  if (const auto *u = std::get_if<RefinerUnified>(&refiner)) {
    RefinerUnified r = *u; // params() hands out mutable views
    j["variant"] = "unified";
    j["K"] = r.classes();
    j["hidden"] = r.hidden();
    j["d_offset"] = r.d_offset();
    j["alpha"] = r.alpha;
    j["diagonal"] = false;
    j["trained"] = r.trained();
    j["input_layout"] = "p_bar[0..K), d - d_offset";
    j["output_layout"] = "W row-major K*K, then b K";
    j["parameters"] = params_json(r.net().params());
  } else {
    RefinerSplit r = std::get<RefinerSplit>(refiner);
    j["variant"] = "split";
    j["K"] = r.classes();
    j["hidden"] = r.hidden();
    j["d_offset"] = r.d_offset();
    j["diagonal"] = r.diagonal();
    j["trained"] = r.trained();
    j["input_layout"] = "detector: d - d_offset; generator: p_bar";
    j["output_layout"] = r.diagonal() ? "diag(W) K, b = 0"
                                      : "W row-major K*K, then b K";
    std::vector<Param> det;
    r.detector().collect(det, "detector");
    Json params = params_json(det);
    const Json gen = params_json(r.generator().params());
    for (auto it = gen.begin(); it != gen.end(); ++it)
      params["generator." + it.key()] = it.value();
    j["parameters"] = std::move(params);
  }
  return j;
}

Refiner refiner_from_json(const Json &j) {
  if (!j.is_object() || !j.contains("format") ||
      !j["format"].is_string() || j["format"] != kFormat)
    throw RefinerFormatError("refiner: unsupported format");
  const auto variant = field<std::string>(j, "variant");
  const auto k = field<std::size_t>(j, "K");
  const auto hidden = field<std::size_t>(j, "hidden");
  const bool trained = field<bool>(j, "trained");
  if (k < 2 || hidden < 1)
    throw RefinerFormatError("refiner: invalid K or hidden");
  const double offset = field<double>(j, "d_offset");
  if (std::abs(offset - std::log(static_cast<double>(k))) > 1e-12)
    throw RefinerFormatError("refiner: d_offset does not match K");
  const Json &params = j.contains("parameters") ? j["parameters"] : Json();

  if (variant == "unified") {
    RefinerUnified r(k, hidden, 0);
    r.alpha = field<double>(j, "alpha");
    load_params(r.net().params(), params);
    if (trained)
      r.mark_trained();
    return r;
  }
  if (variant == "split") {
    RefinerSplit r(k, hidden, field<bool>(j, "diagonal"), 0);
    std::vector<Param> all;
    r.detector().collect(all, "detector");
    for (Param p : r.generator().params()) {
      p.name = "generator." + p.name;
      all.push_back(p);
    }
    load_params(all, params);
    if (trained)
      r.mark_trained();
    return r;
  }
  throw RefinerFormatError("refiner: unknown variant " + variant);
}

void save_refiner(const Refiner &refiner, const std::filesystem::path &path,
                  const Json &metadata) {
  Json j = refiner_to_json(refiner);
  if (!metadata.empty())
    j["metadata"] = metadata;
  write_json_file(path, j);
}

Refiner load_refiner(const std::filesystem::path &path) {
  Json j;
  try {
    j = read_json_file(path);
  } catch (const Json::exception &e) {
    throw RefinerFormatError(std::string("refiner: unreadable file: ") +
                             e.what());
  }
  return refiner_from_json(j);
}

RefinerUnified load_unified(const std::filesystem::path &path) {
  Refiner r = load_refiner(path);
  if (auto *u = std::get_if<RefinerUnified>(&r))
    return std::move(*u);
  throw RefinerFormatError("refiner: file holds a split refiner");
}

RefinerSplit load_split(const std::filesystem::path &path) {
  Refiner r = load_refiner(path);
  if (auto *s = std::get_if<RefinerSplit>(&r))
    return std::move(*s);
  throw RefinerFormatError("refiner: file holds a unified refiner");
}

} // namespace shiftlab
