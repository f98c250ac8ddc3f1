#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace lslp {

struct ImageShape {
    std::size_t width = 0;
    std::size_t height = 0;
    friend bool operator==(const ImageShape&, const ImageShape&) = default;
};

/// One square-ish window g_m. All grids in a set share the same size.
struct Grid {
    std::size_t id = 0;
    std::size_t x0 = 0;
    std::size_t y0 = 0;
    std::size_t width = 0;
    std::size_t height = 0;

    double center_x() const { return static_cast<double>(x0) + static_cast<double>(width) / 2.0; }
    double center_y() const { return static_cast<double>(y0) + static_cast<double>(height) / 2.0; }
    bool contains(std::size_t x, std::size_t y) const {
        return x >= x0 && x < x0 + width && y >= y0 && y < y0 + height;
    }
    friend bool operator==(const Grid&, const Grid&) = default;
};

/// Overlapping grid layout plus a precomputed pixel -> covering-grid index.
///
/// Immutable once built. coverage(x, y) lists the ids of every grid that
/// contains the pixel, in ascending order, and is never empty.
class GridSet {
public:
    static GridSet build(ImageShape image, double alpha, double stride_fraction);

    /// Same layout at feature resolution. Every image dimension must be an
    /// integer multiple of the matching feature dimension.
    GridSet project(ImageShape feature) const;

    ImageShape shape() const { return shape_; }
    double alpha() const { return alpha_; }
    double stride_fraction() const { return stride_fraction_; }
    std::size_t size() const { return grids_.size(); }
    const std::vector<Grid>& grids() const { return grids_; }
    const Grid& grid(std::size_t m) const { return grids_.at(m); }
    std::size_t grid_width() const { return grids_.front().width; }
    std::size_t grid_height() const { return grids_.front().height; }

    /// Ω for pixel (x, y). Throws on out-of-bounds coordinates.
    std::span<const std::size_t> coverage(std::size_t x, std::size_t y) const;

    // Unchecked variant for kernels: pixel index = y * width + x.
    std::span<const std::size_t> coverage_at(std::size_t pixel) const {
        return {cover_ids_.data() + cover_offsets_[pixel], cover_ids_.data() + cover_offsets_[pixel + 1]};
    }

private:
    GridSet(ImageShape shape, double alpha, double stride_fraction, std::vector<Grid> grids);
    void index_coverage();

    ImageShape shape_;
    double alpha_ = 1.0;
    double stride_fraction_ = 1.0;
    std::vector<Grid> grids_;
    std::vector<std::size_t> cover_offsets_;
    std::vector<std::size_t> cover_ids_;
};

/// Regular origins along one axis: multiples of stride from 0, plus a final
/// origin clamped to extent - size when the last regular one falls short.
std::vector<std::size_t> grid_origins(std::size_t extent, std::size_t size, std::size_t stride);

}  // namespace lslp
