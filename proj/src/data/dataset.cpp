#include "data/dataset.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>

#include "core/rng.hpp"
#include "data/loaders.hpp"
#include "data/synth_digits.hpp"

namespace mapkit::data {

namespace {
std::atomic<int> g_blackout{0};
}

DataBlackoutGuard::DataBlackoutGuard() { ++g_blackout; }
DataBlackoutGuard::~DataBlackoutGuard() { --g_blackout; }
bool DataBlackoutGuard::active() { return g_blackout.load() > 0; }

DomainDataset::DomainDataset(std::string domain_id, std::string split,
                             std::vector<int64_t> sample_shape, std::vector<double> samples,
                             std::optional<std::vector<int64_t>> labels, int64_t num_classes)
    : domain_id_(std::move(domain_id)), split_(std::move(split)),
      sample_shape_(std::move(sample_shape)), num_classes_(num_classes),
      samples_(std::move(samples)), labels_(std::move(labels)) {
    int64_t per = shape_numel(sample_shape_);
    if (per <= 0 || samples_.size() % static_cast<size_t>(per) != 0)
        throw std::invalid_argument("dataset '" + domain_id_ + "': sample buffer size " +
                                    std::to_string(samples_.size()) +
                                    " is not a multiple of sample shape " +
                                    shape_to_string(sample_shape_));
    size_ = static_cast<int64_t>(samples_.size()) / per;
    check_invariants();
}

void DomainDataset::check_invariants() const {
    if (labels_ && static_cast<int64_t>(labels_->size()) != size_)
        throw std::invalid_argument("dataset '" + domain_id_ + "': " +
                                    std::to_string(labels_->size()) + " labels for " +
                                    std::to_string(size_) + " samples");
    if (labels_) {
        for (int64_t l : *labels_)
            if (l < 0 || l >= num_classes_)
                throw std::invalid_argument("dataset '" + domain_id_ + "': label " +
                                            std::to_string(l) + " outside [0," +
                                            std::to_string(num_classes_) + ")");
    }
    for (double v : samples_)
        if (!(v >= -1.0 - 1e-9 && v <= 1.0 + 1e-9))
            throw std::invalid_argument("dataset '" + domain_id_ +
                                        "': sample value outside [-1,1]");
}

void DomainDataset::check_access() const {
    if (DataBlackoutGuard::active())
        throw std::runtime_error("dataset '" + domain_id_ +
                                 "' accessed while data-free training is active");
}

Tensor DomainDataset::sample_batch(const std::vector<int64_t>& indices) const {
    check_access();
    counters_->samples.fetch_add(indices.size());
    int64_t per = shape_numel(sample_shape_);
    std::vector<int64_t> shape = {static_cast<int64_t>(indices.size())};
    shape.insert(shape.end(), sample_shape_.begin(), sample_shape_.end());
    Tensor out(shape);
    for (size_t i = 0; i < indices.size(); ++i) {
        int64_t idx = indices[i];
        if (idx < 0 || idx >= size_)
            throw std::out_of_range("dataset '" + domain_id_ + "': index " + std::to_string(idx));
        std::copy(samples_.begin() + idx * per, samples_.begin() + (idx + 1) * per,
                  out.data() + static_cast<int64_t>(i) * per);
    }
    return out;
}

Tensor DomainDataset::sample(int64_t index) const { return sample_batch({index}); }

std::vector<int64_t> DomainDataset::label_batch(const std::vector<int64_t>& indices) const {
    check_access();
    if (!labels_)
        throw std::runtime_error("dataset '" + domain_id_ + "' (" + split_ + ") has no labels");
    counters_->labels.fetch_add(indices.size());
    std::vector<int64_t> out(indices.size());
    for (size_t i = 0; i < indices.size(); ++i) {
        int64_t idx = indices[i];
        if (idx < 0 || idx >= size_)
            throw std::out_of_range("dataset '" + domain_id_ + "': index " + std::to_string(idx));
        out[i] = (*labels_)[static_cast<size_t>(idx)];
    }
    return out;
}

const std::vector<int64_t>& DomainDataset::raw_labels() const {
    if (!labels_)
        throw std::runtime_error("dataset '" + domain_id_ + "' (" + split_ + ") has no labels");
    return *labels_;
}

DomainDataset DomainDataset::without_labels() const {
    DomainDataset d = *this;
    d.labels_.reset();
    return d;  // counters_ intentionally shared
}

DomainDataset DomainDataset::with_channels(int64_t c) const {
    if (channels() == c) return *this;
    if (channels() != 1)
        throw std::invalid_argument("with_channels: can only replicate a 1-channel dataset");
    int64_t hw = sample_shape_[1] * sample_shape_[2];
    std::vector<double> out(static_cast<size_t>(size_ * c * hw));
    for (int64_t n = 0; n < size_; ++n)
        for (int64_t ch = 0; ch < c; ++ch)
            std::copy(samples_.begin() + n * hw, samples_.begin() + (n + 1) * hw,
                      out.begin() + (n * c + ch) * hw);
    DomainDataset d(domain_id_, split_, {c, sample_shape_[1], sample_shape_[2]}, std::move(out),
                    labels_, num_classes_);
    d.counters_ = counters_;
    return d;
}

DomainDataset make_colorized_variant(const DomainDataset& d, uint64_t seed) {
    if (d.channels() != 1)
        throw std::invalid_argument("make_colorized_variant: input '" + d.domain_id() +
                                    "' is already multi-channel");
    const auto& sh = d.sample_shape();
    int64_t hw = sh[1] * sh[2];
    const auto& src = d.raw_samples();
    std::vector<double> out(static_cast<size_t>(d.size() * 3 * hw));
    for (int64_t n = 0; n < d.size(); ++n) {
        Rng rng(Rng::derive(seed, rng_purpose::kColorize, static_cast<uint64_t>(n)));
        double bg[3] = {rng.uniform(), rng.uniform(), rng.uniform()};
        for (int64_t c = 0; c < 3; ++c)
            for (int64_t p = 0; p < hw; ++p) {
                double t = (src[static_cast<size_t>(n * hw + p)] + 1.0) * 0.5;  // [0,1] intensity
                double v = std::fabs(bg[c] - t);  // digit cuts through the background color
                out[static_cast<size_t>((n * 3 + c) * hw + p)] = 2.0 * v - 1.0;
            }
    }
    std::optional<std::vector<int64_t>> labels;
    if (d.has_labels()) labels = d.raw_labels();
    return DomainDataset(d.domain_id() + "+color", d.split(), {3, sh[1], sh[2]}, std::move(out),
                         std::move(labels), d.num_classes());
}

std::vector<double> resize_bilinear(const double* src, int64_t c, int64_t h, int64_t w,
                                    int64_t out_h, int64_t out_w) {
    std::vector<double> out(static_cast<size_t>(c * out_h * out_w));
    for (int64_t ch = 0; ch < c; ++ch) {
        const double* plane = src + ch * h * w;
        for (int64_t y = 0; y < out_h; ++y) {
            double fy = (static_cast<double>(y) + 0.5) * static_cast<double>(h) /
                            static_cast<double>(out_h) - 0.5;
            int64_t y0 = static_cast<int64_t>(std::floor(fy));
            double ty = fy - static_cast<double>(y0);
            int64_t y1 = std::min(y0 + 1, h - 1);
            y0 = std::max<int64_t>(y0, 0);
            for (int64_t x = 0; x < out_w; ++x) {
                double fx = (static_cast<double>(x) + 0.5) * static_cast<double>(w) /
                                static_cast<double>(out_w) - 0.5;
                int64_t x0 = static_cast<int64_t>(std::floor(fx));
                double tx = fx - static_cast<double>(x0);
                int64_t x1 = std::min(x0 + 1, w - 1);
                x0 = std::max<int64_t>(x0, 0);
                double v = plane[y0 * w + x0] * (1 - ty) * (1 - tx) +
                           plane[y0 * w + x1] * (1 - ty) * tx +
                           plane[y1 * w + x0] * ty * (1 - tx) + plane[y1 * w + x1] * ty * tx;
                out[static_cast<size_t>((ch * out_h + y) * out_w + x)] = v;
            }
        }
    }
    return out;
}

std::string resolve_cache_dir(const std::string& explicit_dir) {
    if (!explicit_dir.empty()) return explicit_dir;
    if (const char* env = std::getenv("MAPKIT_DATA_DIR"); env && *env) return env;
    return "data";
}

std::vector<CatalogEntry> catalog() {
    return {
        {"synth-mnist", "procedural handwritten-style digits, 1x28x28 (built in)"},
        {"synth-usps", "procedural scanned-envelope-style digits, rendered 16x16 and "
                       "upsampled to 1x28x28 (built in)"},
        {"mnist", "MNIST idx files from the cache dir, 1x28x28"},
        {"usps", "USPS zip.train/zip.test from the cache dir, upsampled to 1x28x28"},
    };
}

namespace {
uint64_t split_tag(const std::string& split) { return split == "train" ? 1 : 2; }
}  // namespace

DomainDataset load_domain(const std::string& name, const std::string& split, int64_t limit,
                          const std::string& cache_dir) {
    if (DataBlackoutGuard::active())
        throw std::runtime_error("load_domain('" + name +
                                 "') called while data-free training is active");
    if (split != "train" && split != "test")
        throw std::invalid_argument("load_domain: split must be 'train' or 'test', got '" +
                                    split + "'");

    constexpr const char* kColorSuffix = "+color";
    std::string base = name;
    bool colorize = false;
    if (base.size() > 6 && base.ends_with(kColorSuffix)) {
        base = base.substr(0, base.size() - 6);
        colorize = true;
    }

    DomainDataset d;
    if (base == "synth-mnist") {
        d = synth_digits(SynthStyle::handwriting(), base, split, limit);
    } else if (base == "synth-usps") {
        d = synth_digits(SynthStyle::envelope(), base, split, limit);
    } else if (base == "mnist") {
        d = load_mnist_idx(resolve_cache_dir(cache_dir), split, limit);
    } else if (base == "usps") {
        d = load_usps(resolve_cache_dir(cache_dir), split, limit);
    } else {
        std::string known;
        for (const auto& e : catalog()) known += (known.empty() ? "" : ", ") + e.name;
        throw std::invalid_argument("unknown domain '" + name + "'; known domains: " + known +
                                    " (each also accepts a +color suffix)");
    }
    if (colorize) d = make_colorized_variant(d, Rng::derive(0xc01031u, split_tag(split)));
    return d;
}

}  // namespace mapkit::data
