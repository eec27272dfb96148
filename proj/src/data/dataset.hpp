#pragma once

#include <atomic>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "core/tensor.hpp"

namespace mapkit::data {

/// Scoped "no data may be touched" enforcement for data-free training. While
/// any guard is alive, every DomainDataset accessor and every catalog load
/// throws. Counted globally so guards may nest.
class DataBlackoutGuard {
public:
    DataBlackoutGuard();
    ~DataBlackoutGuard();
    DataBlackoutGuard(const DataBlackoutGuard&) = delete;
    DataBlackoutGuard& operator=(const DataBlackoutGuard&) = delete;
    static bool active();
};

/// Labeled or unlabeled samples with a domain tag. Samples are [C,H,W]
/// tensors normalized to [-1,1]; labels, when present, are class indices in
/// [0, k). Access goes through counted accessors so test fixtures can prove
/// that a training path never touched samples or labels.
class DomainDataset {
public:
    DomainDataset() = default;
    DomainDataset(std::string domain_id, std::string split, std::vector<int64_t> sample_shape,
                  std::vector<double> samples, std::optional<std::vector<int64_t>> labels,
                  int64_t num_classes);

    const std::string& domain_id() const { return domain_id_; }
    const std::string& split() const { return split_; }
    int64_t size() const { return size_; }
    const std::vector<int64_t>& sample_shape() const { return sample_shape_; }
    int64_t channels() const { return sample_shape_.at(0); }
    int64_t num_classes() const { return num_classes_; }
    bool has_labels() const { return labels_.has_value(); }

    /// Batch [n, C, H, W] for the given sample indices. Counted.
    Tensor sample_batch(const std::vector<int64_t>& indices) const;
    Tensor sample(int64_t index) const;
    /// Labels for the given indices. Counted; throws if unlabeled.
    std::vector<int64_t> label_batch(const std::vector<int64_t>& indices) const;

    uint64_t sample_reads() const { return counters_->samples.load(); }
    uint64_t label_reads() const { return counters_->labels.load(); }

    /// Label-free view. Shares access counters with this dataset, so reads on
    /// the view still show up on the original (the SF fixtures rely on this).
    DomainDataset without_labels() const;
    /// Replicates a grayscale dataset to `c` channels.
    DomainDataset with_channels(int64_t c) const;

    /// Raw (uncounted) access for dataset construction utilities only.
    const std::vector<double>& raw_samples() const { return samples_; }
    const std::vector<int64_t>& raw_labels() const;

    void check_invariants() const;

private:
    struct Counters {
        std::atomic<uint64_t> samples{0};
        std::atomic<uint64_t> labels{0};
    };

    void check_access() const;

    std::string domain_id_;
    std::string split_;
    std::vector<int64_t> sample_shape_;
    int64_t size_ = 0;
    int64_t num_classes_ = 0;
    std::vector<double> samples_;
    std::optional<std::vector<int64_t>> labels_;
    std::shared_ptr<Counters> counters_ = std::make_shared<Counters>();
};

/// Per-sample random background colorization of a grayscale dataset
/// (3-channel output, labels preserved, deterministic per seed). Stands in
/// for a color-shifted unauthorized domain.
DomainDataset make_colorized_variant(const DomainDataset& d, uint64_t seed);

/// Bilinear resize of one [C,h,w] image to [C,H,W].
std::vector<double> resize_bilinear(const double* src, int64_t c, int64_t h, int64_t w,
                                    int64_t out_h, int64_t out_w);

struct CatalogEntry {
    std::string name;
    std::string description;
};

/// Registered domain catalog. Built-ins: "synth-mnist" and "synth-usps"
/// (procedural, always available) plus "mnist" and "usps" (standard
/// distribution files under the cache dir). A "+color" suffix loads the base
/// domain and applies make_colorized_variant.
std::vector<CatalogEntry> catalog();

/// Loads at most `limit` samples (limit <= 0: all) in deterministic order.
/// Unknown names raise an error listing the known domains; missing files
/// raise an actionable message naming the expected paths.
DomainDataset load_domain(const std::string& name, const std::string& split, int64_t limit,
                          const std::string& cache_dir = "");

/// Cache dir resolution: explicit argument, else $MAPKIT_DATA_DIR, else "data".
std::string resolve_cache_dir(const std::string& explicit_dir);

}  // namespace mapkit::data
