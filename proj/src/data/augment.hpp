#pragma once

#include <vector>

#include "core/tensor.hpp"

namespace mapkit::data {

/// Ordered list of label-preserving, deterministic-given-seed transforms used
/// by pseudo-labeling. Slot 0 is always the identity.
class AugmentationSet {
public:
    enum class Kind { identity, rotate, translate, brightness };

    AugmentationSet() = default;  // empty set (error paths)
    explicit AugmentationSet(std::vector<Kind> kinds) : kinds_(std::move(kinds)) {}

    /// [identity, rotate +-10deg, translate <=2px, brightness +-0.2]
    static AugmentationSet standard();

    size_t size() const { return kinds_.size(); }

    /// Applies transform i to a [N,C,H,W] batch. Shape and pixel range are
    /// preserved; outputs depend only on (i, seed, sample index).
    Tensor apply(const Tensor& batch, size_t i, uint64_t seed) const;

private:
    std::vector<Kind> kinds_;
};

}  // namespace mapkit::data
