#include "core/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace mapkit {

static_assert(std::endian::native == std::endian::little,
              "archive payload assumes little-endian doubles");

namespace {
constexpr char kMagic[8] = {'M', 'A', 'P', 'A', 'R', 'C', 'H', '1'};
}

void Archive::save(const std::filesystem::path& path) const {
    nlohmann::json header;
    header["format"] = 1;
    header["meta"] = meta;
    nlohmann::json index = nlohmann::json::array();
    int64_t offset = 0;
    for (const auto& [name, t] : tensors) {  // std::map: already name-ordered
        nlohmann::json e;
        e["name"] = name;
        e["shape"] = t.shape();
        e["offset"] = offset;
        e["count"] = t.numel();
        index.push_back(e);
        offset += t.numel();
    }
    header["tensors"] = index;
    std::string htext = header.dump();  // nlohmann objects dump with sorted keys

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("archive: cannot open for write: " + path.string());
    f.write(kMagic, sizeof(kMagic));
    uint64_t hlen = htext.size();
    f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    f.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    for (const auto& [name, t] : tensors)
        f.write(reinterpret_cast<const char*>(t.data()),
                static_cast<std::streamsize>(t.numel() * sizeof(double)));
    if (!f) throw std::runtime_error("archive: write failed: " + path.string());
}

Archive Archive::load(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("archive: cannot open: " + path.string());
    char magic[8];
    f.read(magic, sizeof(magic));
    if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error("archive: bad magic in " + path.string());
    uint64_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string htext(hlen, '\0');
    f.read(htext.data(), static_cast<std::streamsize>(hlen));
    if (!f) throw std::runtime_error("archive: truncated header in " + path.string());

    nlohmann::json header = nlohmann::json::parse(htext);
    Archive a;
    a.meta = header.value("meta", nlohmann::json::object());
    for (const auto& e : header.at("tensors")) {
        std::string name = e.at("name").get<std::string>();
        std::vector<int64_t> shape = e.at("shape").get<std::vector<int64_t>>();
        int64_t count = e.at("count").get<int64_t>();
        if (count != shape_numel(shape))
            throw std::runtime_error("archive: inconsistent entry for tensor " + name);
        Tensor t(shape);
        f.read(reinterpret_cast<char*>(t.data()),
               static_cast<std::streamsize>(count * sizeof(double)));
        if (!f) throw std::runtime_error("archive: truncated payload at tensor " + name);
        a.tensors.emplace(std::move(name), std::move(t));
    }
    return a;
}

const Tensor& Archive::require(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw std::runtime_error("archive: missing tensor '" + name + "'");
    return it->second;
}

}  // namespace mapkit
