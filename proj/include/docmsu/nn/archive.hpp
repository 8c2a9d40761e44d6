// SPDX-License-Identifier: Apache-2.0
//
// Self-describing tensor archive used for checkpoints and imported encoder
// weights.
//
//   bytes 0..7   magic "DOCMSUA1"
//   bytes 8..15  little-endian u64 header length H
//   next H bytes UTF-8 JSON: {"meta": {...}, "dtype": "f64"|"f32",
//                             "tensors": [{"name", "shape", "offset"}, ...]}
//   remainder    packed little-endian values; offsets count elements
#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "docmsu/nn/layers.hpp"
#include "json.hpp"

namespace docmsu::nn {

struct ArchivedTensor {
    Shape shape;
    std::vector<double> values;
};

struct TensorArchive {
    nlohmann::json meta;
    std::map<std::string, ArchivedTensor> tensors;

    const ArchivedTensor& at(const std::string& name) const;
};

void write_archive(const std::filesystem::path& path, const nlohmann::json& meta, const NamedParams& params);
TensorArchive read_archive(const std::filesystem::path& path);

/// Copies archived values into `params`; every name must exist with a matching shape.
void load_into(const TensorArchive& archive, const NamedParams& params);

}  // namespace docmsu::nn
