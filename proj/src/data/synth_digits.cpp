#include "data/synth_digits.hpp"

#include <array>
#include <cmath>

#include "core/rng.hpp"

namespace mapkit::data {

namespace {

struct Pt {
    double x, y;
};
using Poly = std::vector<Pt>;

Poly arc(double cx, double cy, double rx, double ry, double a0, double a1, int n = 10) {
    Poly p;
    for (int i = 0; i <= n; ++i) {
        double a = a0 + (a1 - a0) * static_cast<double>(i) / n;
        p.push_back({cx + rx * std::cos(a), cy + ry * std::sin(a)});
    }
    return p;
}

/// Stroke skeletons on the unit square, y pointing down.
std::vector<Poly> digit_strokes(int64_t digit) {
    constexpr double pi = 3.14159265358979323846;
    switch (digit) {
        case 0: return {arc(.50, .50, .26, .36, 0, 2 * pi, 20)};
        case 1: return {{{.36, .26}, {.54, .13}, {.54, .87}}};
        case 2: {
            Poly top = arc(.50, .32, .24, .20, -pi, 0, 10);
            top.push_back({.30, .86});
            top.push_back({.76, .86});
            return {top};
        }
        case 3: {
            Poly a = arc(.47, .29, .22, .17, -pi * 0.9, pi * 0.5, 10);
            Poly b = arc(.47, .67, .25, .21, -pi * 0.5, pi * 0.9, 10);
            return {a, b};
        }
        case 4: return {{{.62, .13}, {.26, .60}, {.80, .60}}, {{.64, .36}, {.64, .89}}};
        case 5: {
            Poly a = {{.72, .14}, {.32, .14}, {.29, .48}};
            Poly b = arc(.48, .65, .26, .22, -pi * 0.55, pi * 0.8, 12);
            return {a, b};
        }
        case 6: {
            Poly a = {{.64, .12}, {.44, .38}, {.32, .62}};
            Poly b = arc(.50, .67, .21, .21, 0, 2 * pi, 16);
            return {a, b};
        }
        case 7: return {{{.26, .15}, {.76, .15}, {.46, .88}}};
        case 8: {
            Poly a = arc(.50, .31, .19, .18, 0, 2 * pi, 16);
            Poly b = arc(.50, .68, .23, .20, 0, 2 * pi, 16);
            return {a, b};
        }
        case 9: {
            Poly a = arc(.50, .33, .20, .20, 0, 2 * pi, 16);
            Poly b = {{.70, .36}, {.64, .64}, {.56, .88}};
            return {a, b};
        }
        default: throw std::invalid_argument("digit out of range");
    }
}

double seg_dist(double px, double py, const Pt& a, const Pt& b) {
    double vx = b.x - a.x, vy = b.y - a.y;
    double wx = px - a.x, wy = py - a.y;
    double len2 = vx * vx + vy * vy;
    double t = len2 > 0 ? std::clamp((wx * vx + wy * vy) / len2, 0.0, 1.0) : 0.0;
    double dx = wx - t * vx, dy = wy - t * vy;
    return std::sqrt(dx * dx + dy * dy);
}

void gaussian_blur(std::vector<double>& img, int64_t n, double sigma) {
    if (sigma <= 0.05) return;
    int r = std::max(1, static_cast<int>(std::ceil(2.0 * sigma)));
    std::vector<double> k(static_cast<size_t>(2 * r + 1));
    double s = 0;
    for (int i = -r; i <= r; ++i) {
        k[static_cast<size_t>(i + r)] = std::exp(-0.5 * i * i / (sigma * sigma));
        s += k[static_cast<size_t>(i + r)];
    }
    for (auto& v : k) v /= s;
    std::vector<double> tmp(img.size());
    for (int64_t y = 0; y < n; ++y)
        for (int64_t x = 0; x < n; ++x) {
            double acc = 0;
            for (int i = -r; i <= r; ++i) {
                int64_t xx = std::clamp<int64_t>(x + i, 0, n - 1);
                acc += img[static_cast<size_t>(y * n + xx)] * k[static_cast<size_t>(i + r)];
            }
            tmp[static_cast<size_t>(y * n + x)] = acc;
        }
    for (int64_t y = 0; y < n; ++y)
        for (int64_t x = 0; x < n; ++x) {
            double acc = 0;
            for (int i = -r; i <= r; ++i) {
                int64_t yy = std::clamp<int64_t>(y + i, 0, n - 1);
                acc += tmp[static_cast<size_t>(yy * n + x)] * k[static_cast<size_t>(i + r)];
            }
            img[static_cast<size_t>(y * n + x)] = acc;
        }
}

/// Renders one digit to [0,1] intensities at style.render_size.
std::vector<double> render_digit(int64_t digit, const SynthStyle& st, Rng& rng) {
    auto strokes = digit_strokes(digit);

    double theta = rng.uniform(-st.rot_deg, st.rot_deg) * 3.14159265358979 / 180.0;
    double shear = rng.uniform(-st.shear, st.shear) + rng.uniform(st.slant_lo, st.slant_hi);
    double sx = rng.uniform(st.scale_lo, st.scale_hi);
    double sy = rng.uniform(st.scale_lo, st.scale_hi);
    double tx = rng.uniform(-st.shift, st.shift);
    double ty = rng.uniform(-st.shift, st.shift);
    double ct = std::cos(theta), snt = std::sin(theta);

    for (auto& poly : strokes)
        for (auto& p : poly) {
            double x = p.x - 0.5 + rng.uniform(-st.jitter, st.jitter);
            double y = p.y - 0.5 + rng.uniform(-st.jitter, st.jitter);
            x += shear * y;  // italic lean
            double xr = ct * x - snt * y, yr = snt * x + ct * y;
            p.x = xr * sx + 0.5 + tx;
            p.y = yr * sy + 0.5 + ty;
        }

    double thick = rng.uniform(st.thickness_lo, st.thickness_hi);
    int64_t n = st.render_size;
    std::vector<double> img(static_cast<size_t>(n * n), 0.0);
    double aa = 0.9 / static_cast<double>(n);  // anti-alias band of ~one pixel
    for (int64_t y = 0; y < n; ++y)
        for (int64_t x = 0; x < n; ++x) {
            double px = (static_cast<double>(x) + 0.5) / static_cast<double>(n);
            double py = (static_cast<double>(y) + 0.5) / static_cast<double>(n);
            double best = 1e9;
            for (const auto& poly : strokes)
                for (size_t i = 0; i + 1 < poly.size(); ++i)
                    best = std::min(best, seg_dist(px, py, poly[i], poly[i + 1]));
            double v = std::clamp((thick - best) / aa + 0.5, 0.0, 1.0);
            img[static_cast<size_t>(y * n + x)] = v;
        }

    gaussian_blur(img, n, rng.uniform(st.blur_lo, st.blur_hi));
    for (auto& v : img) v = std::clamp(v + rng.uniform(-st.noise, st.noise), 0.0, 1.0);
    return img;
}

}  // namespace

SynthStyle SynthStyle::handwriting() {
    SynthStyle s;
    s.domain_seed = 0x5d1a;
    return s;
}

SynthStyle SynthStyle::envelope() {
    SynthStyle s;
    s.render_size = 16;
    s.out_size = 28;
    s.thickness_lo = 0.085;
    s.thickness_hi = 0.135;
    s.rot_deg = 8.0;
    s.shear = 0.05;
    s.slant_lo = 0.10;
    s.slant_hi = 0.38;
    s.scale_lo = 0.82;
    s.scale_hi = 1.00;
    s.jitter = 0.022;
    s.noise = 0.035;
    s.blur_lo = 0.2;
    s.blur_hi = 0.5;
    s.domain_seed = 0x05b5;
    return s;
}

DomainDataset synth_digits(const SynthStyle& style, const std::string& domain_id,
                           const std::string& split, int64_t limit) {
    int64_t n = limit > 0 ? limit : (split == "train" ? 8000 : 2000);
    uint64_t split_seed = Rng::derive(style.domain_seed, rng_purpose::kSynthData,
                                      split == "train" ? 1u : 2u);
    int64_t out = style.out_size;
    std::vector<double> samples(static_cast<size_t>(n * out * out));
    std::vector<int64_t> labels(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        Rng rng(Rng::mix(split_seed, static_cast<uint64_t>(i)));
        int64_t digit = rng.randint(0, 10);
        labels[static_cast<size_t>(i)] = digit;
        std::vector<double> img = render_digit(digit, style, rng);
        if (style.render_size != out)
            img = resize_bilinear(img.data(), 1, style.render_size, style.render_size, out, out);
        for (int64_t p = 0; p < out * out; ++p)
            samples[static_cast<size_t>(i * out * out + p)] =
                2.0 * std::clamp(img[static_cast<size_t>(p)], 0.0, 1.0) - 1.0;
    }
    return DomainDataset(domain_id, split, {1, out, out}, std::move(samples), std::move(labels),
                         10);
}

}  // namespace mapkit::data
