// SPDX-License-Identifier: Apache-2.0
#include "docmsu/nn/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "docmsu/errors.hpp"

namespace docmsu::nn {
namespace {

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

constexpr char kMagic[8] = {'D', 'O', 'C', 'M', 'S', 'U', 'A', '1'};

}  // namespace

const ArchivedTensor& TensorArchive::at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ValidationError("archive has no tensor '" + name + "'");
    return it->second;
}

void write_archive(const std::filesystem::path& path, const nlohmann::json& meta, const NamedParams& params) {
    nlohmann::json header;
    header["meta"] = meta;
    header["dtype"] = "f64";
    header["tensors"] = nlohmann::json::array();
    std::size_t offset = 0;
    for (const auto& [name, t] : params) {
        header["tensors"].push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
        offset += static_cast<std::size_t>(t.numel());
    }
    const std::string text = header.dump();
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(kMagic, sizeof(kMagic));
    const auto len = static_cast<std::uint64_t>(text.size());
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [_, t] : params) {
        out.write(reinterpret_cast<const char*>(t.data().data()),
                  static_cast<std::streamsize>(t.data().size() * sizeof(double)));
    }
}

TensorArchive read_archive(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw MissingArtifactError("archive not found: " + path.string());
    std::ifstream in(path, std::ios::binary);
    char magic[8];
    std::uint64_t len = 0;
    if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
        throw ValidationError("not a tensor archive: " + path.string());
    }
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string text(len, '\0');
    if (!in.read(text.data(), static_cast<std::streamsize>(len))) {
        throw ValidationError("truncated archive header: " + path.string());
    }
    const auto header = nlohmann::json::parse(text);
    const std::string dtype = header.value("dtype", "f64");
    if (dtype != "f64" && dtype != "f32") throw ValidationError("unsupported archive dtype " + dtype);
    const std::size_t width = dtype == "f64" ? 8 : 4;

    const auto data_start = in.tellg();
    TensorArchive ar;
    ar.meta = header.value("meta", nlohmann::json::object());
    for (const auto& t : header.at("tensors")) {
        ArchivedTensor at;
        at.shape = t.at("shape").get<Shape>();
        const auto n = static_cast<std::size_t>(numel(at.shape));
        const auto offset = t.at("offset").get<std::size_t>();
        in.seekg(data_start + static_cast<std::streamoff>(offset * width));
        at.values.resize(n);
        if (width == 8) {
            in.read(reinterpret_cast<char*>(at.values.data()), static_cast<std::streamsize>(n * 8));
        } else {
            std::vector<float> buf(n);
            in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * 4));
            std::copy(buf.begin(), buf.end(), at.values.begin());
        }
        if (!in) throw ValidationError("truncated archive data: " + path.string());
        ar.tensors.emplace(t.at("name").get<std::string>(), std::move(at));
    }
    return ar;
}

void load_into(const TensorArchive& archive, const NamedParams& params) {
    for (const auto& [name, t] : params) {
        const auto& src = archive.at(name);
        if (src.shape != t.shape()) {
            throw ValidationError("tensor '" + name + "': archive shape " + shape_str(src.shape) +
                                  " vs model shape " + shape_str(t.shape()));
        }
        Tensor dst = t;
        std::copy(src.values.begin(), src.values.end(), dst.mutable_data().begin());
    }
}

}  // namespace docmsu::nn
