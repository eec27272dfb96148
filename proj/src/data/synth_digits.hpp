#pragma once

#include <string>

#include "data/dataset.hpp"

namespace mapkit::data {

/// Rendering style for the built-in procedural digit domains. Two presets
/// with deliberately different stroke statistics give the desk-scale source /
/// target pair a genuine covariate shift.
struct SynthStyle {
    int64_t render_size = 28;  // rasterization canvas
    int64_t out_size = 28;     // final size (bilinear resample if different)
    double thickness_lo = 0.050, thickness_hi = 0.075;  // stroke half-width, unit coords
    double rot_deg = 12.0;
    double shear = 0.15;
    double slant_lo = 0.0, slant_hi = 0.0;  // fixed italic lean range
    double scale_lo = 0.78, scale_hi = 0.96;
    double jitter = 0.016;  // control-point wobble
    double shift = 0.05;    // translation range, unit coords
    double noise = 0.02;
    double blur_lo = 0.4, blur_hi = 0.9;  // gaussian sigma in pixels
    uint64_t domain_seed = 0;

    static SynthStyle handwriting();  // mnist-like
    static SynthStyle envelope();     // usps-like: 16x16 render, thick, slanted
};

/// Deterministic dataset of rendered digits. Sample i depends only on
/// (style.domain_seed, split, i), so a smaller limit is a prefix of a larger
/// one. limit <= 0 selects the default split sizes (8000 train / 2000 test).
DomainDataset synth_digits(const SynthStyle& style, const std::string& domain_id,
                           const std::string& split, int64_t limit);

}  // namespace mapkit::data
