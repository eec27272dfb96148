#include "data/augment.hpp"

#include <cmath>

#include "core/rng.hpp"

namespace mapkit::data {

namespace {

/// Inverse-mapped rotation about the image center with bilinear sampling;
/// out-of-bounds reads fill with the -1 background.
void rotate_image(const double* src, double* dst, int64_t c, int64_t h, int64_t w, double deg) {
    double rad = deg * 3.14159265358979323846 / 180.0;
    double ct = std::cos(rad), st = std::sin(rad);
    double cy = (static_cast<double>(h) - 1) / 2.0, cx = (static_cast<double>(w) - 1) / 2.0;
    for (int64_t ch = 0; ch < c; ++ch) {
        const double* plane = src + ch * h * w;
        double* out = dst + ch * h * w;
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
                double sx = ct * dx + st * dy + cx;
                double sy = -st * dx + ct * dy + cy;
                int64_t x0 = static_cast<int64_t>(std::floor(sx));
                int64_t y0 = static_cast<int64_t>(std::floor(sy));
                double tx = sx - static_cast<double>(x0), ty = sy - static_cast<double>(y0);
                auto px = [&](int64_t yy, int64_t xx) {
                    return (yy >= 0 && yy < h && xx >= 0 && xx < w) ? plane[yy * w + xx] : -1.0;
                };
                out[y * w + x] = px(y0, x0) * (1 - ty) * (1 - tx) + px(y0, x0 + 1) * (1 - ty) * tx +
                                 px(y0 + 1, x0) * ty * (1 - tx) + px(y0 + 1, x0 + 1) * ty * tx;
            }
    }
}

void shift_image(const double* src, double* dst, int64_t c, int64_t h, int64_t w, int64_t dy,
                 int64_t dx) {
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                int64_t sy = y - dy, sx = x - dx;
                dst[(ch * h + y) * w + x] = (sy >= 0 && sy < h && sx >= 0 && sx < w)
                                                ? src[(ch * h + sy) * w + sx]
                                                : -1.0;
            }
}

}  // namespace

AugmentationSet AugmentationSet::standard() {
    return AugmentationSet(
        {Kind::identity, Kind::rotate, Kind::translate, Kind::brightness});
}

Tensor AugmentationSet::apply(const Tensor& batch, size_t i, uint64_t seed) const {
    if (i >= kinds_.size())
        throw std::out_of_range("augment: index " + std::to_string(i) + " >= n_aug " +
                                std::to_string(kinds_.size()));
    const auto& sh = batch.shape();
    if (sh.size() != 4) throw std::invalid_argument("augment: expects [N,C,H,W]");
    if (kinds_[i] == Kind::identity) return batch;

    int64_t n = sh[0], c = sh[1], h = sh[2], w = sh[3];
    Tensor out(sh);
    for (int64_t s = 0; s < n; ++s) {
        Rng rng(Rng::derive(Rng::mix(seed, static_cast<uint64_t>(i)), rng_purpose::kAugment,
                            static_cast<uint64_t>(s)));
        const double* src = batch.data() + s * c * h * w;
        double* dst = out.data() + s * c * h * w;
        switch (kinds_[i]) {
            case Kind::rotate:
                rotate_image(src, dst, c, h, w, rng.uniform(-10.0, 10.0));
                break;
            case Kind::translate:
                shift_image(src, dst, c, h, w, rng.randint(-2, 3), rng.randint(-2, 3));
                break;
            case Kind::brightness: {
                double delta = rng.uniform(-0.2, 0.2);
                for (int64_t p = 0; p < c * h * w; ++p)
                    dst[p] = std::clamp(src[p] + delta, -1.0, 1.0);
                break;
            }
            case Kind::identity:
                break;
        }
    }
    return out;
}

}  // namespace mapkit::data
