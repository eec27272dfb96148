#include "eval/figures.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace mapkit::eval {

namespace fs = std::filesystem;

void write_png_rgb(const fs::path& path, const std::vector<unsigned char>& rgb, int width,
                   int height) {
    if (static_cast<size_t>(width) * height * 3 != rgb.size())
        throw std::invalid_argument("write_png_rgb: buffer size mismatch");
    // raw scanlines with filter byte 0
    std::vector<unsigned char> raw;
    raw.reserve(rgb.size() + static_cast<size_t>(height));
    for (int y = 0; y < height; ++y) {
        raw.push_back(0);
        raw.insert(raw.end(), rgb.begin() + static_cast<size_t>(y) * width * 3,
                   rgb.begin() + (static_cast<size_t>(y) + 1) * width * 3);
    }
    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<unsigned char> z(bound);
    if (compress2(z.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw std::runtime_error("write_png_rgb: deflate failed");
    z.resize(bound);

    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");

    auto be32 = [](uint32_t v) {
        return std::array<unsigned char, 4>{static_cast<unsigned char>(v >> 24),
                                            static_cast<unsigned char>(v >> 16),
                                            static_cast<unsigned char>(v >> 8),
                                            static_cast<unsigned char>(v)};
    };
    auto chunk = [&](const char* type, const std::vector<unsigned char>& data) {
        auto len = be32(static_cast<uint32_t>(data.size()));
        f.write(reinterpret_cast<const char*>(len.data()), 4);
        std::vector<unsigned char> body(type, type + 4);
        body.insert(body.end(), data.begin(), data.end());
        f.write(reinterpret_cast<const char*>(body.data()),
                static_cast<std::streamsize>(body.size()));
        uint32_t crc = static_cast<uint32_t>(
            crc32(0L, body.data(), static_cast<uInt>(body.size())));
        auto c = be32(crc);
        f.write(reinterpret_cast<const char*>(c.data()), 4);
    };

    const unsigned char sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    f.write(reinterpret_cast<const char*>(sig), 8);
    std::vector<unsigned char> ihdr;
    for (auto b : be32(static_cast<uint32_t>(width))) ihdr.push_back(b);
    for (auto b : be32(static_cast<uint32_t>(height))) ihdr.push_back(b);
    ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0});  // 8-bit RGB
    chunk("IHDR", ihdr);
    chunk("IDAT", z);
    chunk("IEND", {});
    if (!f) throw std::runtime_error("write failed: " + path.string());
}

namespace {

struct Color {
    unsigned char r, g, b;
};
constexpr Color kWhite{255, 255, 255}, kBlack{30, 30, 30}, kGrey{200, 200, 200};
constexpr Color kGreen{0x8e, 0xcf, 0xc9}, kOrange{0xff, 0xbe, 0x7a}, kRed{0xf2, 0x79, 0x70};
constexpr Color kBlue{0x5b, 0x9b, 0xd5};

class Canvas {
public:
    Canvas(int w, int h) : w_(w), h_(h), buf_(static_cast<size_t>(w * h * 3), 255) {}

    void px(int x, int y, Color c) {
        if (x < 0 || x >= w_ || y < 0 || y >= h_) return;
        size_t i = (static_cast<size_t>(y) * w_ + x) * 3;
        buf_[i] = c.r;
        buf_[i + 1] = c.g;
        buf_[i + 2] = c.b;
    }
    void rect(int x0, int y0, int x1, int y1, Color c) {
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) px(x, y, c);
    }
    void frame(int x0, int y0, int x1, int y1, Color c) {
        for (int x = x0; x <= x1; ++x) {
            px(x, y0, c);
            px(x, y1, c);
        }
        for (int y = y0; y <= y1; ++y) {
            px(x0, y, c);
            px(x1, y, c);
        }
    }
    void line(int x0, int y0, int x1, int y1, Color c, int thick = 1) {
        int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
        int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1, err = dx + dy;
        while (true) {
            for (int t = -(thick / 2); t <= thick / 2; ++t) px(x0, y0 + t, c);
            if (x0 == x1 && y0 == y1) break;
            int e2 = 2 * err;
            if (e2 >= dy) {
                err += dy;
                x0 += sx;
            }
            if (e2 <= dx) {
                err += dx;
                y0 += sy;
            }
        }
    }
    void text(int x, int y, const std::string& s, Color c, int scale = 1);

    const std::vector<unsigned char>& buf() const { return buf_; }
    int w() const { return w_; }
    int h() const { return h_; }

private:
    int w_, h_;
    std::vector<unsigned char> buf_;
};

/// 5x7 column-bit font for the chart labels (digits, uppercase, few symbols).
const unsigned char* glyph(char ch) {
    static const unsigned char font[][5] = {
        {0x3e, 0x51, 0x49, 0x45, 0x3e},  // 0
        {0x00, 0x42, 0x7f, 0x40, 0x00},  // 1
        {0x42, 0x61, 0x51, 0x49, 0x46},  // 2
        {0x21, 0x41, 0x45, 0x4b, 0x31},  // 3
        {0x18, 0x14, 0x12, 0x7f, 0x10},  // 4
        {0x27, 0x45, 0x45, 0x45, 0x39},  // 5
        {0x3c, 0x4a, 0x49, 0x49, 0x30},  // 6
        {0x01, 0x71, 0x09, 0x05, 0x03},  // 7
        {0x36, 0x49, 0x49, 0x49, 0x36},  // 8
        {0x06, 0x49, 0x49, 0x29, 0x1e},  // 9
        {0x7e, 0x11, 0x11, 0x11, 0x7e},  // A
        {0x7f, 0x49, 0x49, 0x49, 0x36},  // B
        {0x3e, 0x41, 0x41, 0x41, 0x22},  // C
        {0x7f, 0x41, 0x41, 0x22, 0x1c},  // D
        {0x7f, 0x49, 0x49, 0x49, 0x41},  // E
        {0x7f, 0x09, 0x09, 0x09, 0x01},  // F
        {0x3e, 0x41, 0x49, 0x49, 0x7a},  // G
        {0x7f, 0x08, 0x08, 0x08, 0x7f},  // H
        {0x00, 0x41, 0x7f, 0x41, 0x00},  // I
        {0x20, 0x40, 0x41, 0x3f, 0x01},  // J
        {0x7f, 0x08, 0x14, 0x22, 0x41},  // K
        {0x7f, 0x40, 0x40, 0x40, 0x40},  // L
        {0x7f, 0x02, 0x0c, 0x02, 0x7f},  // M
        {0x7f, 0x04, 0x08, 0x10, 0x7f},  // N
        {0x3e, 0x41, 0x41, 0x41, 0x3e},  // O
        {0x7f, 0x09, 0x09, 0x09, 0x06},  // P
        {0x3e, 0x41, 0x51, 0x21, 0x5e},  // Q
        {0x7f, 0x09, 0x19, 0x29, 0x46},  // R
        {0x46, 0x49, 0x49, 0x49, 0x31},  // S
        {0x01, 0x01, 0x7f, 0x01, 0x01},  // T
        {0x3f, 0x40, 0x40, 0x40, 0x3f},  // U
        {0x1f, 0x20, 0x40, 0x20, 0x1f},  // V
        {0x3f, 0x40, 0x38, 0x40, 0x3f},  // W
        {0x63, 0x14, 0x08, 0x14, 0x63},  // X
        {0x07, 0x08, 0x70, 0x08, 0x07},  // Y
        {0x61, 0x51, 0x49, 0x45, 0x43},  // Z
        {0x00, 0x00, 0x00, 0x00, 0x00},  // space
        {0x00, 0x60, 0x60, 0x00, 0x00},  // .
        {0x08, 0x08, 0x08, 0x08, 0x08},  // -
        {0x23, 0x13, 0x08, 0x64, 0x62},  // %
        {0x00, 0x36, 0x36, 0x00, 0x00},  // :
        {0x20, 0x10, 0x08, 0x04, 0x02},  // /
        {0x08, 0x08, 0x3e, 0x08, 0x08},  // +
        {0x00, 0x1c, 0x22, 0x41, 0x00},  // (
        {0x00, 0x41, 0x22, 0x1c, 0x00},  // )
    };
    if (ch >= '0' && ch <= '9') return font[ch - '0'];
    if (ch >= 'A' && ch <= 'Z') return font[10 + ch - 'A'];
    if (ch >= 'a' && ch <= 'z') return font[10 + ch - 'a'];
    switch (ch) {
        case ' ': return font[36];
        case '.': return font[37];
        case '-': return font[38];
        case '%': return font[39];
        case ':': return font[40];
        case '/': return font[41];
        case '+': return font[42];
        case '(': return font[43];
        case ')': return font[44];
        default: return font[36];
    }
}

void Canvas::text(int x, int y, const std::string& s, Color c, int scale) {
    for (char ch : s) {
        const unsigned char* g = glyph(ch);
        for (int col = 0; col < 5; ++col)
            for (int row = 0; row < 7; ++row)
                if (g[col] & (1 << row))
                    for (int sx = 0; sx < scale; ++sx)
                        for (int sy = 0; sy < scale; ++sy)
                            px(x + col * scale + sx, y + row * scale + sy, c);
        x += 6 * scale;
    }
}

std::string fmt1(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f", v);
    return buf;
}

std::string fmt3(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    return buf;
}

}  // namespace

std::vector<fs::path> render_figures(const MetricsReport& r, const fs::path& out_dir) {
    fs::create_directories(out_dir);
    std::vector<fs::path> written;

    const int W = 560, H = 360;
    Canvas cv(W, H);
    const int x0 = 60, y0 = 40, x1 = W - 30, y1 = H - 70;
    cv.frame(x0, y0, x1, y1, kBlack);
    for (int pct = 0; pct <= 100; pct += 20) {
        int y = y1 - (y1 - y0) * pct / 100;
        cv.line(x0, y, x1, y, kGrey);
        cv.text(x0 - 34, y - 3, std::to_string(pct), kBlack);
    }

    struct Group {
        std::string label;
        double src, tgt;
    };
    std::vector<Group> groups = {
        {"ORIGINAL", r.acc_original.at(r.source_domain).pct(),
         r.acc_original.at(r.target_domain).pct()},
        {"PROTECTED", r.acc_protected.at(r.source_domain).pct(),
         r.acc_protected.at(r.target_domain).pct()},
    };

    int gw = (x1 - x0) / static_cast<int>(groups.size());
    int bw = gw / 4;
    std::vector<std::pair<int, int>> line_pts;
    for (size_t gi = 0; gi < groups.size(); ++gi) {
        int gx = x0 + static_cast<int>(gi) * gw + gw / 2;
        auto bar = [&](int cx, double pct, Color c) {
            int top = y1 - static_cast<int>((y1 - y0) * std::clamp(pct, 0.0, 100.0) / 100.0);
            cv.rect(cx - bw / 2, top, cx + bw / 2, y1 - 1, c);
            cv.frame(cx - bw / 2, top, cx + bw / 2, y1 - 1, kBlack);
            cv.text(cx - 11, top - 10, fmt1(pct), kBlack);
        };
        bar(gx - bw, groups[gi].src, kGreen);
        bar(gx + bw, groups[gi].tgt, kOrange);
        // relative degradation: source accuracy minus target accuracy
        double deg = groups[gi].src - groups[gi].tgt;
        int ly = y1 - static_cast<int>((y1 - y0) * std::clamp(deg, 0.0, 100.0) / 100.0);
        line_pts.push_back({gx, ly});
        cv.text(gx - 26, y1 + 8, groups[gi].label, kBlack);
    }
    for (size_t i = 0; i + 1 < line_pts.size(); ++i)
        cv.line(line_pts[i].first, line_pts[i].second, line_pts[i + 1].first,
                line_pts[i + 1].second, kRed, 3);
    for (auto [x, y] : line_pts) cv.rect(x - 3, y - 3, x + 3, y + 3, kRed);

    std::string title = r.source_domain + " / " + r.target_domain + "  " + r.mode;
    cv.text(x0, 14, title, kBlack);
    std::string std_label = r.st_d_metric.infinite ? "ST-D: NO TARGET DROP"
                                                   : "ST-D: " + fmt3(r.st_d_metric.value);
    cv.text(x0, y1 + 24, std_label, kBlack);
    cv.text(x0, y1 + 38, "SRC DROP " + fmt1(r.source_drop_points) + " (" +
                             fmt1(r.source_drop_rel_pct) + "%)  TGT DROP " +
                             fmt1(r.target_drop_points) + " (" + fmt1(r.target_drop_rel_pct) +
                             "%)",
            kBlack);

    fs::path f = out_dir / ("accuracy_" + r.mode + "_seed" + std::to_string(r.seed) + ".png");
    write_png_rgb(f, cv.buf(), cv.w(), cv.h());
    written.push_back(f);
    return written;
}

fs::path render_loss_trace(const std::vector<double>& losses, const fs::path& out_file) {
    const int W = 560, H = 300;
    Canvas cv(W, H);
    const int x0 = 50, y0 = 30, x1 = W - 20, y1 = H - 40;
    cv.frame(x0, y0, x1, y1, kBlack);
    if (!losses.empty()) {
        double lo = *std::min_element(losses.begin(), losses.end());
        double hi = *std::max_element(losses.begin(), losses.end());
        if (hi - lo < 1e-12) hi = lo + 1.0;
        int prev_x = -1, prev_y = -1;
        for (size_t i = 0; i < losses.size(); ++i) {
            int x = x0 + static_cast<int>((x1 - x0) * static_cast<double>(i) /
                                          std::max<size_t>(losses.size() - 1, 1));
            int y = y1 - static_cast<int>((y1 - y0) * (losses[i] - lo) / (hi - lo));
            if (prev_x >= 0) cv.line(prev_x, prev_y, x, y, kBlue, 2);
            prev_x = x;
            prev_y = y;
        }
        cv.text(x0, 12, "LOSS TRACE  MIN " + fmt3(lo) + "  MAX " + fmt3(hi), kBlack);
        cv.text(x0, y1 + 10, "STEP 0 - " + std::to_string(losses.size() - 1), kBlack);
    }
    write_png_rgb(out_file, cv.buf(), cv.w(), cv.h());
    return out_file;
}

}  // namespace mapkit::eval
