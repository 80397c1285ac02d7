// SPDX-License-Identifier: Apache-2.0
#include "shiftlab/serialize.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace shiftlab {

Json matrix_to_json(const Matrix &m) {
  return Json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", m.values()}};
}

Matrix matrix_from_json(const Json &j) {
  return Matrix(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>(),
                j.at("data").get<std::vector<double>>());
}

namespace {

Json rows_to_json(const Matrix &m) {
  Json rows = Json::array();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    rows.push_back(std::vector<double>(r.begin(), r.end()));
  }
  return rows;
}

Matrix rows_from_json(const Json &rows) {
  const std::size_t n = rows.size();
  const std::size_t d = n == 0 ? 0 : rows.at(0).size();
  Matrix m(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = rows.at(i).get<std::vector<double>>();
    if (r.size() != d)
      throw std::invalid_argument("ragged feature rows");
    std::copy(r.begin(), r.end(), m.row(i).begin());
  }
  return m;
}

} // namespace

Json mixture_to_json(const GaussianMixtureSpec &spec) {
  return Json{{"classes", spec.classes},
              {"dim", spec.dim},
              {"means", rows_to_json(spec.means)},
              {"sigma", spec.sigma},
              {"covariate_shift", spec.covariate_shift},
              {"priors", spec.priors}};
}

GaussianMixtureSpec mixture_from_json(const Json &j) {
  GaussianMixtureSpec s;
  s.classes = j.at("classes").get<std::size_t>();
  s.dim = j.at("dim").get<std::size_t>();
  s.means = rows_from_json(j.at("means"));
  s.sigma = j.at("sigma").get<double>();
  s.covariate_shift = j.at("covariate_shift").get<Vector>();
  s.priors = j.at("priors").get<Vector>();
  s.validate();
  return s;
}

Json dataset_to_json(const LabeledDataset &data, const Json &spec_echo,
                     std::uint64_t seed) {
  return Json{{"format", "shiftlab-dataset/1"},
              {"spec", spec_echo},
              {"seed", seed},
              {"classes", data.classes},
              {"features", rows_to_json(data.features)},
              {"labels", data.labels}};
}

LabeledDataset dataset_from_json(const Json &j) {
  if (j.value("format", "") != "shiftlab-dataset/1")
    throw std::invalid_argument("not a shiftlab-dataset/1 document");
  LabeledDataset d;
  d.classes = j.at("classes").get<std::size_t>();
  d.features = rows_from_json(j.at("features"));
  d.labels = j.at("labels").get<std::vector<int>>();
  d.validate();
  return d;
}

Json stream_to_json(const BatchStream &stream, const Json &spec_echo,
                    std::uint64_t seed) {
  Json batches = Json::array();
  for (const auto &b : stream.batches)
    batches.push_back({{"features", rows_to_json(b.features)},
                       {"labels", b.labels},
                       {"histogram", b.histogram}});
  return Json{{"format", "shiftlab-stream/1"},
              {"spec", spec_echo},
              {"seed", seed},
              {"classes", stream.classes},
              {"resampled", stream.resampled},
              {"batches", std::move(batches)}};
}

BatchStream stream_from_json(const Json &j) {
  if (j.value("format", "") != "shiftlab-stream/1")
    throw std::invalid_argument("not a shiftlab-stream/1 document");
  BatchStream s;
  s.classes = j.at("classes").get<std::size_t>();
  s.resampled = j.at("resampled").get<bool>();
  for (const auto &jb : j.at("batches")) {
    Batch b;
    b.features = rows_from_json(jb.at("features"));
    b.labels = jb.at("labels").get<std::vector<int>>();
    b.histogram = jb.at("histogram").get<std::vector<std::size_t>>();
    s.batches.push_back(std::move(b));
  }
  return s;
}

void write_text_file(const std::filesystem::path &path,
                     const std::string &text) {
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out)
    throw std::runtime_error("write failed for " + path.string());
}

void write_json_file(const std::filesystem::path &path, const Json &j) {
  write_text_file(path, j.dump(2) + "\n");
}

Json read_json_file(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw std::runtime_error("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return Json::parse(ss.str());
}

std::string fnv1a_hex(const std::string &bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

} // namespace shiftlab
