#include "lslp/plot.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>

#include "lslp/error.hpp"

namespace lslp {

namespace {

constexpr std::uint32_t kPalette[] = {0x1f77b4, 0xff7f0e, 0x2ca02c, 0xd62728, 0x9467bd, 0x8c564b, 0xe377c2, 0x7f7f7f};
constexpr std::uint32_t kAxis = 0x303030;
constexpr std::uint32_t kGuide = 0xd0d0d0;

// 3x5 glyphs, one row per 3-bit group, most significant bit leftmost.
const std::map<char, std::array<std::uint8_t, 5>>& glyphs() {
    static const std::map<char, std::array<std::uint8_t, 5>> g{
        {'0', {7, 5, 5, 5, 7}}, {'1', {2, 6, 2, 2, 7}}, {'2', {7, 1, 7, 4, 7}}, {'3', {7, 1, 7, 1, 7}},
        {'4', {5, 5, 7, 1, 1}}, {'5', {7, 4, 7, 1, 7}}, {'6', {7, 4, 7, 5, 7}}, {'7', {7, 1, 1, 1, 1}},
        {'8', {7, 5, 7, 5, 7}}, {'9', {7, 5, 7, 1, 7}}, {'.', {0, 0, 0, 0, 2}}, {'-', {0, 0, 7, 0, 0}},
        {'/', {1, 1, 2, 4, 4}},
    };
    return g;
}

void text(RgbImage& img, long x, long y, const std::string& s, std::uint32_t rgb, long scale = 2) {
    for (char ch : s) {
        if (auto it = glyphs().find(ch); it != glyphs().end())
            for (long r = 0; r < 5; ++r)
                for (long c = 0; c < 3; ++c)
                    if (it->second[static_cast<std::size_t>(r)] & (4 >> c))
                        for (long dy = 0; dy < scale; ++dy)
                            for (long dx = 0; dx < scale; ++dx) img.set(x + c * scale + dx, y + r * scale + dy, rgb);
        x += 4 * scale;
    }
}

long text_width(const std::string& s, long scale = 2) { return static_cast<long>(s.size()) * 4 * scale - scale; }

void rect(RgbImage& img, long x0, long y0, long x1, long y1, std::uint32_t rgb) {
    for (long y = std::min(y0, y1); y <= std::max(y0, y1); ++y)
        for (long x = std::min(x0, x1); x <= std::max(x0, x1); ++x) img.set(x, y, rgb);
}

std::string fmt(double v, const char* spec) {
    char buf[32];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

// Plot frame on [0, 1] vertically with guides at every 0.25.
struct Frame {
    long left = 48, top = 16, right, bottom;
    long y_of(double v) const { return bottom - static_cast<long>(std::lround(v * static_cast<double>(bottom - top))); }
    long x_of(double v) const { return left + static_cast<long>(std::lround(v * static_cast<double>(right - left))); }
};

Frame frame(RgbImage& img, bool x_ticks) {
    Frame f;
    f.right = static_cast<long>(img.width) - 16;
    f.bottom = static_cast<long>(img.height) - 40;
    for (int i = 0; i <= 4; ++i) {
        const double v = 0.25 * i;
        const long y = f.y_of(v);
        rect(img, f.left, y, f.right, y, kGuide);
        const std::string label = fmt(v, "%.2f");
        text(img, f.left - 8 - text_width(label), y - 5, label, kAxis);
        if (x_ticks) {
            const long x = f.x_of(v);
            rect(img, x, f.bottom, x, f.bottom + 4, kAxis);
            text(img, x - text_width(label) / 2, f.bottom + 10, label, kAxis);
        }
    }
    rect(img, f.left, f.top, f.left, f.bottom, kAxis);
    rect(img, f.left, f.bottom, f.right, f.bottom, kAxis);
    return f;
}

}  // namespace

RgbImage::RgbImage(std::size_t w, std::size_t h, std::uint8_t fill) : width(w), height(h), pixels(w * h * 3, fill) {}

void RgbImage::set(long x, long y, std::uint32_t rgb) {
    if (x < 0 || y < 0 || static_cast<std::size_t>(x) >= width || static_cast<std::size_t>(y) >= height) return;
    auto* p = &pixels[(static_cast<std::size_t>(y) * width + static_cast<std::size_t>(x)) * 3];
    p[0] = static_cast<std::uint8_t>(rgb >> 16);
    p[1] = static_cast<std::uint8_t>(rgb >> 8);
    p[2] = static_cast<std::uint8_t>(rgb);
}

std::uint32_t RgbImage::get(std::size_t x, std::size_t y) const {
    const auto* p = &pixels[(y * width + x) * 3];
    return (std::uint32_t{p[0]} << 16) | (std::uint32_t{p[1]} << 8) | p[2];
}

void write_png(const std::filesystem::path& path, const RgbImage& image) {
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw DataError("cannot write " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw DataError("libpng failed writing " + path.string());
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::size_t y = 0; y < image.height; ++y)
        png_write_row(png, const_cast<png_bytep>(&image.pixels[y * image.width * 3]));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

RgbImage sweep_bar_chart(std::span<const SweepRow> rows) {
    const std::size_t slot = 64;
    RgbImage img(std::max<std::size_t>(240, 64 + slot * rows.size()), 260);
    const Frame f = frame(img, false);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const long x0 = f.left + 12 + static_cast<long>(i * slot), x1 = x0 + static_cast<long>(slot) - 24;
        const double v = std::clamp(rows[i].mean_dice, 0.0, 1.0);
        rect(img, x0, f.y_of(v), x1, f.bottom - 1, rows[i].setting.overlap ? kPalette[0] : kPalette[1]);
        const std::string value = fmt(rows[i].mean_dice, "%.3f");
        text(img, (x0 + x1) / 2 - text_width(value) / 2, f.y_of(v) - 14, value, kAxis);
        const std::string alpha = fmt(rows[i].setting.alpha, "%g");
        text(img, (x0 + x1) / 2 - text_width(alpha) / 2, f.bottom + 10, alpha, kAxis);
    }
    return img;
}

RgbImage misalignment_scatter_plot(std::span<const ScatterPoint> points) {
    RgbImage img(320, 300);
    const Frame f = frame(img, true);
    for (int i = 0; i <= 200; ++i) img.set(f.x_of(i / 200.0), f.y_of(i / 200.0), kGuide);
    std::map<int, std::uint32_t> colour;
    for (const auto& p : points)
        if (!colour.contains(p.class_id)) colour[p.class_id] = kPalette[colour.size() % std::size(kPalette)];
    for (const auto& p : points) {
        const long x = f.x_of(std::clamp(p.alignment_dice, 0.0, 1.0));
        const long y = f.y_of(std::clamp(p.segmentation_dice, 0.0, 1.0));
        rect(img, x - 2, y - 2, x + 2, y + 2, colour[p.class_id]);
    }
    long ly = f.top;
    for (const auto& [id, rgb] : colour) {
        rect(img, f.right - 40, ly, f.right - 32, ly + 8, rgb);
        text(img, f.right - 26, ly - 1, std::to_string(id), kAxis);
        ly += 14;
    }
    return img;
}

RgbImage mask_overlay(const Tensor& image, const Tensor& labels, std::size_t zoom) {
    if (image.rank() != 3 || labels.rank() != 2 || image.dim(1) != labels.dim(0) || image.dim(2) != labels.dim(1))
        throw ShapeError("overlay needs a (1, H, W) image and (H, W) labels, got " + shape_string(image.shape()) +
                         " and " + shape_string(labels.shape()));
    const std::size_t h = labels.dim(0), w = labels.dim(1);
    RgbImage img(w * zoom, h * zoom);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            const double g = std::clamp(static_cast<double>(image[y * w + x]), 0.0, 1.0) * 255.0;
            double r = g, gr = g, b = g;
            if (const int l = static_cast<int>(labels.at(y, x)); l > 0) {
                const std::uint32_t c = kPalette[static_cast<std::size_t>(l - 1) % std::size(kPalette)];
                r = 0.5 * r + 0.5 * (c >> 16 & 0xff);
                gr = 0.5 * gr + 0.5 * (c >> 8 & 0xff);
                b = 0.5 * b + 0.5 * (c & 0xff);
            }
            const std::uint32_t rgb = (static_cast<std::uint32_t>(r) << 16) | (static_cast<std::uint32_t>(gr) << 8) |
                                      static_cast<std::uint32_t>(b);
            for (std::size_t dy = 0; dy < zoom; ++dy)
                for (std::size_t dx = 0; dx < zoom; ++dx)
                    img.set(static_cast<long>(x * zoom + dx), static_cast<long>(y * zoom + dy), rgb);
        }
    return img;
}

}  // namespace lslp
