#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "lslp/episodes.hpp"

namespace lslp {

/// One organ-like class: an ellipse jittered around a canonical location.
struct PhantomClass {
    std::string name;
    double center_x = 0.5;  // fractions of image size
    double center_y = 0.5;
    double radius = 0.1;  // semi-major axis as a fraction of image width
    double intensity_mean = 0.5;
    double intensity_std = 0.1;  // per-pixel Gaussian texture
};

struct PhantomSpec {
    ImageShape image_size{64, 64};
    std::vector<PhantomClass> classes;
    double position_jitter = 0.03;  // sigma of centre offset, fraction of image size
    double radius_jitter = 0.1;     // sigma of relative radius change
    double eccentricity_min = 0.7;  // minor / major axis ratio
    double eccentricity_max = 1.0;
    double background_mean = 0.5;
    double background_amplitude = 0.2;  // smooth low-frequency field
    std::size_t background_cells = 4;   // control points per axis of that field
    std::size_t n_images = 100;
    std::size_t n_test_images = 20;  // last images tagged "test"
    std::uint64_t seed = 7;
    std::size_t max_retries = 200;
};

/// Six-class abdominal-style layout (first `n_classes` entries of it).
PhantomSpec default_phantom_spec(std::size_t n_classes = 6);

nlohmann::json to_json(const PhantomSpec& spec);
/// Unknown keys are rejected; missing keys keep their defaults.
PhantomSpec phantom_spec_from_json(const nlohmann::json& j);

/// Renders the whole corpus in memory. Deterministic from spec.seed; each
/// image draws from its own derived stream.
Dataset generate_phantoms(const PhantomSpec& spec);

/// Writes generate_phantoms(spec) to `dir`. Nothing is left behind on error.
void generate_dataset(const PhantomSpec& spec, const std::filesystem::path& dir);

struct AlignmentStats {
    int class_id = 0;
    std::size_t pairs = 0;  // 0 when the class never appears in two images
    double min = 0.0, median = 0.0, max = 0.0, mean = 0.0;
};

/// Distribution of ground-truth mask Dice between every pair of images that
/// contain the class: how strong the layout prior is.
std::vector<AlignmentStats> layout_report(const Dataset& dataset);

}  // namespace lslp
