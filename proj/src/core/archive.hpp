#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

#include "core/tensor.hpp"

namespace mapkit {

/// Single-file archive of named tensors plus a JSON metadata record. Layout:
///   magic "MAPARCH1" | u64 header length | canonical JSON header | raw doubles
/// The header is serialized with sorted keys and tensors in name order, so a
/// load/save round trip is byte-identical.
struct Archive {
    std::map<std::string, Tensor> tensors;
    nlohmann::json meta = nlohmann::json::object();

    void save(const std::filesystem::path& path) const;
    static Archive load(const std::filesystem::path& path);

    const Tensor& require(const std::string& name) const;
};

}  // namespace mapkit
