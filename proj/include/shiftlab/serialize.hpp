// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"
#include "shiftlab/datagen.hpp"
#include "shiftlab/matrix.hpp"

namespace shiftlab {

using Json = nlohmann::json;

/// Matrices serialize as {"rows", "cols", "data": [row-major values]}.
Json matrix_to_json(const Matrix &m);
Matrix matrix_from_json(const Json &j);

Json mixture_to_json(const GaussianMixtureSpec &spec);
GaussianMixtureSpec mixture_from_json(const Json &j);

/// {"format": "shiftlab-dataset/1", "spec", "seed", "classes",
///  "features": [[...], ...], "labels": [...]}
Json dataset_to_json(const LabeledDataset &data, const Json &spec_echo,
                     std::uint64_t seed);
LabeledDataset dataset_from_json(const Json &j);

/// {"format": "shiftlab-stream/1", "spec", "seed", "classes", "resampled",
///  "batches": [{"features", "labels", "histogram"}, ...]}
Json stream_to_json(const BatchStream &stream, const Json &spec_echo,
                    std::uint64_t seed);
BatchStream stream_from_json(const Json &j);

/// Dumps with a trailing newline; byte-stable for equal inputs.
void write_json_file(const std::filesystem::path &path, const Json &j);
Json read_json_file(const std::filesystem::path &path);
void write_text_file(const std::filesystem::path &path,
                     const std::string &text);

/// 64-bit FNV-1a, rendered as 16 lowercase hex digits.
std::string fnv1a_hex(const std::string &bytes);

} // namespace shiftlab
