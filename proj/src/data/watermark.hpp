#pragma once

#include <json.hpp>

#include "data/dataset.hpp"

namespace mapkit::data {

/// Fixed pixel patch blended into a corner of every sample to build the
/// watermarked auxiliary domain for ownership verification.
struct WatermarkSpec {
    enum class Anchor { top_left, top_right, bottom_left, bottom_right };

    Tensor pattern;              // [ph, pw] in [-1,1]
    double blend = 0.5;          // in (0,1]
    Anchor anchor = Anchor::bottom_right;
    uint64_t seed = 0;

    /// 6x6 checkerboard at blend 0.5, bottom-right.
    static WatermarkSpec checkerboard(int64_t size = 6, double blend = 0.5);

    void validate() const;
    nlohmann::json to_json() const;
    static WatermarkSpec from_json(const nlohmann::json& j);
};

/// out = (1-c) x + c pattern on the patch region (all channels); everything
/// outside the patch is bit-identical to the input. Labels unchanged; domain
/// id gains a "+wm" suffix.
DomainDataset apply_watermark(const DomainDataset& d, const WatermarkSpec& w);

/// Same blend applied to a batch tensor [N,C,H,W] (training-path use).
Tensor watermark_batch(const Tensor& batch, const WatermarkSpec& w);

}  // namespace mapkit::data
