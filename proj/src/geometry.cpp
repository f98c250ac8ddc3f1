#include "lslp/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "lslp/error.hpp"

namespace lslp {

namespace {

std::size_t scaled(double fraction, std::size_t extent) {
    // Tolerate representation error in fractions like 1/8 or 0.1.
    return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(extent) + 1e-9));
}

}  // namespace

std::vector<std::size_t> grid_origins(std::size_t extent, std::size_t size, std::size_t stride) {
    std::vector<std::size_t> origins;
    const std::size_t last = extent - size;
    for (std::size_t o = 0; o <= last; o += stride) origins.push_back(o);
    if (origins.back() != last) origins.push_back(last);
    return origins;
}

GridSet::GridSet(ImageShape shape, double alpha, double stride_fraction, std::vector<Grid> grids)
    : shape_(shape), alpha_(alpha), stride_fraction_(stride_fraction), grids_(std::move(grids)) {
    index_coverage();
}

GridSet GridSet::build(ImageShape image, double alpha, double stride_fraction) {
    if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("grid scale alpha must lie in (0, 1]");
    if (!(stride_fraction > 0.0 && stride_fraction <= 1.0))
        throw ConfigError("stride fraction must lie in (0, 1]");
    if (image.width == 0 || image.height == 0) throw ConfigError("image shape must be positive");
    const std::size_t gw = scaled(alpha, image.width);
    const std::size_t gh = scaled(alpha, image.height);
    if (gw < 1 || gh < 1) throw ConfigError("grid smaller than one pixel");
    const std::size_t sx = std::max<std::size_t>(1, scaled(stride_fraction, gw));
    const std::size_t sy = std::max<std::size_t>(1, scaled(stride_fraction, gh));

    std::vector<Grid> grids;
    for (auto y0 : grid_origins(image.height, gh, sy))
        for (auto x0 : grid_origins(image.width, gw, sx))
            grids.push_back(Grid{grids.size(), x0, y0, gw, gh});
    return GridSet(image, alpha, stride_fraction, std::move(grids));
}

GridSet GridSet::project(ImageShape feature) const {
    if (feature.width == 0 || feature.height == 0 || shape_.width % feature.width != 0 ||
        shape_.height % feature.height != 0)
        throw ConfigError("feature shape " + std::to_string(feature.width) + "x" + std::to_string(feature.height) +
                          " is not an integral downsample of " + std::to_string(shape_.width) + "x" +
                          std::to_string(shape_.height));
    const std::size_t fx = shape_.width / feature.width;
    const std::size_t fy = shape_.height / feature.height;
    if (fx == 1 && fy == 1) return *this;

    std::vector<Grid> grids;
    grids.reserve(grids_.size());
    for (const auto& g : grids_) {
        Grid p{g.id, g.x0 / fx, g.y0 / fy, std::max<std::size_t>(1, g.width / fx),
               std::max<std::size_t>(1, g.height / fy)};
        p.x0 = std::min(p.x0, feature.width - p.width);
        p.y0 = std::min(p.y0, feature.height - p.height);
        grids.push_back(p);
    }
    return GridSet(feature, alpha_, stride_fraction_, std::move(grids));
}

void GridSet::index_coverage() {
    const std::size_t w = shape_.width, h = shape_.height;
    std::vector<std::size_t> counts(w * h, 0);
    for (const auto& g : grids_)
        for (std::size_t y = g.y0; y < g.y0 + g.height; ++y)
            for (std::size_t x = g.x0; x < g.x0 + g.width; ++x) ++counts[y * w + x];

    cover_offsets_.assign(w * h + 1, 0);
    for (std::size_t p = 0; p < w * h; ++p) {
        if (counts[p] == 0)
            throw ConfigError("grid layout leaves pixel (" + std::to_string(p % w) + ", " + std::to_string(p / w) +
                              ") uncovered");
        cover_offsets_[p + 1] = cover_offsets_[p] + counts[p];
    }
    cover_ids_.assign(cover_offsets_.back(), 0);
    std::vector<std::size_t> cursor(cover_offsets_.begin(), cover_offsets_.end() - 1);
    // Grids are visited in id order, so each pixel's list comes out ascending.
    for (const auto& g : grids_)
        for (std::size_t y = g.y0; y < g.y0 + g.height; ++y)
            for (std::size_t x = g.x0; x < g.x0 + g.width; ++x) cover_ids_[cursor[y * w + x]++] = g.id;
}

std::span<const std::size_t> GridSet::coverage(std::size_t x, std::size_t y) const {
    if (x >= shape_.width || y >= shape_.height)
        throw ShapeError("pixel (" + std::to_string(x) + ", " + std::to_string(y) + ") outside " +
                          std::to_string(shape_.width) + "x" + std::to_string(shape_.height) + " grid layout");
    return coverage_at(y * shape_.width + x);
}

}  // namespace lslp
