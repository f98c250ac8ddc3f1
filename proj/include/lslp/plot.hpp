#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "lslp/metrics.hpp"
#include "lslp/tensor.hpp"

namespace lslp {

struct RgbImage {
    std::size_t width = 0, height = 0;
    std::vector<std::uint8_t> pixels;  // row-major RGB

    RgbImage(std::size_t w, std::size_t h, std::uint8_t fill = 255);
    void set(long x, long y, std::uint32_t rgb);  // ignores out-of-range coordinates
    std::uint32_t get(std::size_t x, std::size_t y) const;
};

void write_png(const std::filesystem::path& path, const RgbImage& image);

/// Bars for each sweep setting; overlap-on bars are blue, overlap-off orange,
/// each captioned with its alpha and topped with its mean Dice.
RgbImage sweep_bar_chart(std::span<const SweepRow> rows);

/// Segmentation Dice against alignment Dice on [0, 1]^2, one colour per class.
RgbImage misalignment_scatter_plot(std::span<const ScatterPoint> points);

/// Grayscale (1, H, W) image with labelled pixels tinted per class, scaled up by `zoom`.
RgbImage mask_overlay(const Tensor& image, const Tensor& labels, std::size_t zoom = 4);

}  // namespace lslp
