#include "data/watermark.hpp"

namespace mapkit::data {

namespace {
const char* anchor_name(WatermarkSpec::Anchor a) {
    switch (a) {
        case WatermarkSpec::Anchor::top_left: return "top_left";
        case WatermarkSpec::Anchor::top_right: return "top_right";
        case WatermarkSpec::Anchor::bottom_left: return "bottom_left";
        case WatermarkSpec::Anchor::bottom_right: return "bottom_right";
    }
    return "?";
}

WatermarkSpec::Anchor anchor_from_name(const std::string& s) {
    if (s == "top_left") return WatermarkSpec::Anchor::top_left;
    if (s == "top_right") return WatermarkSpec::Anchor::top_right;
    if (s == "bottom_left") return WatermarkSpec::Anchor::bottom_left;
    if (s == "bottom_right") return WatermarkSpec::Anchor::bottom_right;
    throw std::invalid_argument("watermark.anchor: unknown anchor '" + s + "'");
}

/// Top-left corner of the patch inside an h x w image.
std::pair<int64_t, int64_t> anchor_origin(const WatermarkSpec& w, int64_t h, int64_t wd) {
    int64_t ph = w.pattern.dim(0), pw = w.pattern.dim(1);
    switch (w.anchor) {
        case WatermarkSpec::Anchor::top_left: return {0, 0};
        case WatermarkSpec::Anchor::top_right: return {0, wd - pw};
        case WatermarkSpec::Anchor::bottom_left: return {h - ph, 0};
        case WatermarkSpec::Anchor::bottom_right: return {h - ph, wd - pw};
    }
    return {0, 0};
}
}  // namespace

WatermarkSpec WatermarkSpec::checkerboard(int64_t size, double blend) {
    WatermarkSpec w;
    w.pattern = Tensor({size, size});
    for (int64_t y = 0; y < size; ++y)
        for (int64_t x = 0; x < size; ++x) w.pattern[y * size + x] = ((x + y) % 2 == 0) ? 1.0 : -1.0;
    w.blend = blend;
    return w;
}

void WatermarkSpec::validate() const {
    if (pattern.rank() != 2 || pattern.numel() == 0)
        throw std::invalid_argument("watermark.pattern: must be a non-empty [h,w] patch");
    for (int64_t i = 0; i < pattern.numel(); ++i)
        if (pattern[i] < -1.0 || pattern[i] > 1.0)
            throw std::invalid_argument("watermark.pattern: values must lie in [-1,1]");
    if (!(blend > 0.0 && blend <= 1.0))
        throw std::invalid_argument("watermark.blend: must be in (0,1]");
}

nlohmann::json WatermarkSpec::to_json() const {
    nlohmann::json j;
    j["size"] = {pattern.dim(0), pattern.dim(1)};
    j["pattern"] = pattern.vec();
    j["blend"] = blend;
    j["anchor"] = anchor_name(anchor);
    j["seed"] = seed;
    return j;
}

WatermarkSpec WatermarkSpec::from_json(const nlohmann::json& j) {
    WatermarkSpec w = checkerboard();
    if (j.contains("size") && !j.contains("pattern")) {
        auto sz = j["size"];
        int64_t s = sz.is_array() ? sz[0].get<int64_t>() : sz.get<int64_t>();
        w = checkerboard(s);
    }
    if (j.contains("pattern")) {
        auto sz = j.at("size").get<std::vector<int64_t>>();
        w.pattern = Tensor(sz, j["pattern"].get<std::vector<double>>());
    }
    w.blend = j.value("blend", 0.5);
    if (j.contains("anchor")) w.anchor = anchor_from_name(j["anchor"].get<std::string>());
    w.seed = j.value("seed", 0);
    w.validate();
    return w;
}

Tensor watermark_batch(const Tensor& batch, const WatermarkSpec& w) {
    w.validate();
    const auto& sh = batch.shape();
    if (sh.size() != 4) throw std::invalid_argument("watermark_batch: expects [N,C,H,W]");
    int64_t ph = w.pattern.dim(0), pw = w.pattern.dim(1);
    if (ph > sh[2] || pw > sh[3])
        throw std::invalid_argument("watermark pattern " + w.pattern.shape_str() +
                                    " does not fit inside samples of " + shape_to_string(sh));
    auto [oy, ox] = anchor_origin(w, sh[2], sh[3]);
    Tensor out = batch;
    for (int64_t n = 0; n < sh[0]; ++n)
        for (int64_t c = 0; c < sh[1]; ++c)
            for (int64_t y = 0; y < ph; ++y)
                for (int64_t x = 0; x < pw; ++x) {
                    int64_t idx = ((n * sh[1] + c) * sh[2] + oy + y) * sh[3] + ox + x;
                    out[idx] = (1.0 - w.blend) * out[idx] + w.blend * w.pattern[y * pw + x];
                }
    return out;
}

DomainDataset apply_watermark(const DomainDataset& d, const WatermarkSpec& w) {
    w.validate();
    const auto& sh = d.sample_shape();
    if (w.pattern.dim(0) > sh[1] || w.pattern.dim(1) > sh[2])
        throw std::invalid_argument("watermark pattern " + w.pattern.shape_str() +
                                    " does not fit inside samples of " + shape_to_string(sh));
    std::vector<int64_t> all(static_cast<size_t>(d.size()));
    for (int64_t i = 0; i < d.size(); ++i) all[static_cast<size_t>(i)] = i;
    Tensor batch = d.sample_batch(all);
    Tensor marked = watermark_batch(batch, w);
    std::optional<std::vector<int64_t>> labels;
    if (d.has_labels()) labels = d.raw_labels();
    return DomainDataset(d.domain_id() + "+wm", d.split(), sh, marked.vec(), std::move(labels),
                         d.num_classes());
}

}  // namespace mapkit::data
