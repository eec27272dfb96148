#include "data/loaders.hpp"

#include <zlib.h>

#include <cstring>
#include <filesystem>
#include <sstream>

namespace mapkit::data {

namespace {

namespace fs = std::filesystem;

/// Finds `name` or `name.gz` under dir; empty string if neither exists.
std::string find_file(const std::string& dir, const std::string& name) {
    fs::path plain = fs::path(dir) / name;
    if (fs::exists(plain)) return plain.string();
    fs::path gz = fs::path(dir) / (name + ".gz");
    if (fs::exists(gz)) return gz.string();
    return {};
}

/// Whole-file read through zlib; transparently inflates .gz content.
std::vector<unsigned char> read_maybe_gz(const std::string& path) {
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f) throw std::runtime_error("cannot open " + path);
    std::vector<unsigned char> out;
    unsigned char buf[1 << 16];
    int n;
    while ((n = gzread(f, buf, sizeof(buf))) > 0) out.insert(out.end(), buf, buf + n);
    gzclose(f);
    if (n < 0) throw std::runtime_error("read error in " + path);
    return out;
}

uint32_t be32(const unsigned char* p) {
    return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

[[noreturn]] void missing_files(const std::string& what, const std::string& dir,
                                const std::string& names) {
    throw std::runtime_error(what + " files not found under '" + dir + "'. Expected " + names +
                             " (optionally .gz). Download the standard distribution into that "
                             "directory, or point MAPKIT_DATA_DIR / data.cache_dir at it. The "
                             "built-in 'synth-mnist' / 'synth-usps' domains need no files.");
}

}  // namespace

DomainDataset load_mnist_idx(const std::string& dir, const std::string& split, int64_t limit) {
    std::string prefix = split == "train" ? "train" : "t10k";
    std::string img_path = find_file(dir, prefix + "-images-idx3-ubyte");
    std::string lbl_path = find_file(dir, prefix + "-labels-idx1-ubyte");
    if (img_path.empty() || lbl_path.empty())
        missing_files("MNIST", dir, prefix + "-images-idx3-ubyte and " + prefix +
                                         "-labels-idx1-ubyte");

    auto img = read_maybe_gz(img_path);
    auto lbl = read_maybe_gz(lbl_path);
    if (img.size() < 16 || be32(img.data()) != 2051)
        throw std::runtime_error("bad idx image magic in " + img_path);
    if (lbl.size() < 8 || be32(lbl.data()) != 2049)
        throw std::runtime_error("bad idx label magic in " + lbl_path);
    int64_t count = be32(img.data() + 4);
    int64_t rows = be32(img.data() + 8), cols = be32(img.data() + 12);
    if (static_cast<int64_t>(be32(lbl.data() + 4)) != count)
        throw std::runtime_error("MNIST image/label counts differ");
    if (img.size() < 16 + static_cast<size_t>(count * rows * cols))
        throw std::runtime_error("truncated idx image payload in " + img_path);

    int64_t n = (limit > 0 && limit < count) ? limit : count;
    std::vector<double> samples(static_cast<size_t>(n * rows * cols));
    std::vector<int64_t> labels(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        labels[static_cast<size_t>(i)] = lbl[8 + static_cast<size_t>(i)];
        for (int64_t p = 0; p < rows * cols; ++p)
            samples[static_cast<size_t>(i * rows * cols + p)] =
                2.0 * (img[16 + static_cast<size_t>(i * rows * cols + p)] / 255.0) - 1.0;
    }
    return DomainDataset("mnist", split, {1, rows, cols}, std::move(samples), std::move(labels),
                         10);
}

DomainDataset load_usps(const std::string& dir, const std::string& split, int64_t limit) {
    std::string name = split == "train" ? "zip.train" : "zip.test";
    std::string path = find_file(dir, name);
    if (path.empty()) missing_files("USPS", dir, name);

    auto raw = read_maybe_gz(path);
    std::istringstream in(std::string(raw.begin(), raw.end()));
    std::vector<double> samples;
    std::vector<int64_t> labels;
    std::string line;
    constexpr int64_t kSrc = 16, kOut = 28;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        double label;
        if (!(ls >> label)) continue;
        std::vector<double> px(kSrc * kSrc);
        for (auto& v : px)
            if (!(ls >> v)) throw std::runtime_error("short USPS row in " + path);
        auto up = resize_bilinear(px.data(), 1, kSrc, kSrc, kOut, kOut);
        for (double v : up) samples.push_back(std::clamp(v, -1.0, 1.0));
        labels.push_back(static_cast<int64_t>(label));
        if (limit > 0 && static_cast<int64_t>(labels.size()) >= limit) break;
    }
    if (labels.empty()) throw std::runtime_error("no samples parsed from " + path);
    return DomainDataset("usps", split, {1, kOut, kOut}, std::move(samples), std::move(labels),
                         10);
}

}  // namespace mapkit::data
