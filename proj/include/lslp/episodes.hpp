#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lslp/geometry.hpp"
#include "lslp/tensor.hpp"

namespace lslp {

/// A (1, H, W) image with intensities in [0, 1] and disjoint binary (H, W)
/// masks keyed by dataset class id. Only classes present in the image carry
/// a mask.
struct LabeledImage {
    Tensor image;
    std::map<int, Tensor> masks;
    std::string subset;  // "train", "test", or empty for both sides

    bool usable_for(bool test_side) const { return subset.empty() || subset == (test_side ? "test" : "train"); }

    bool contains(int class_id) const { return masks.contains(class_id); }
};

struct ClassInfo {
    int id = 0;
    std::string name;
};

struct Dataset {
    ImageShape shape;
    std::vector<ClassInfo> classes;
    std::vector<LabeledImage> images;

    std::vector<int> class_ids() const;
    const std::string& class_name(int id) const;
};

inline constexpr int kDatasetSchemaVersion = 1;

/// Reads manifest.json plus the referenced LSLP tensors and validates every
/// image. When `working` differs from the stored size, intensities are
/// resized bilinearly and masks by nearest neighbour.
Dataset load_dataset(const std::filesystem::path& dir, std::optional<ImageShape> working = std::nullopt);
void save_dataset(const std::filesystem::path& dir, const Dataset& dataset);
void validate_image(const LabeledImage& image, ImageShape shape);

Tensor resize_bilinear(const Tensor& image, ImageShape to);
Tensor resize_nearest(const Tensor& mask, ImageShape to);

struct ClassSplit {
    std::vector<int> train;
    std::vector<int> test;
};

/// Disjoint train/test class sets; both sides must be non-empty.
ClassSplit split_classes(std::span<const int> all_classes, std::span<const int> test_classes);

enum class SplitSide { Train, Test };

struct EpisodeShape {
    std::size_t ways = 1;     // n
    std::size_t shots = 1;    // k
    std::size_t queries = 1;  // n_q
};

struct EpisodeImage {
    std::size_t index = 0;      // position in the dataset
    Tensor image;               // (1, H, W)
    std::vector<Tensor> masks;  // one (H, W) mask per episode class, in episode order
};

struct Episode {
    std::vector<int> classes;
    std::vector<EpisodeImage> support;
    std::vector<EpisodeImage> query;
    std::uint64_t seed = 0;
};

/// n classes uniformly without replacement from one side of the split, then
/// k support and n_q query images without replacement among the images that
/// contain every chosen class (and belong to that side's image subset).
/// `only` restricts the candidate classes.
Episode sample_episode(const Dataset& dataset, const ClassSplit& split, SplitSide side, EpisodeShape shape,
                       std::uint64_t seed, std::span<const int> only = {});

/// Counter-based stream derivation: independent seeds per (base, a, b, c).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0);

struct AugmentParams {
    bool enabled = true;
    double probability = 0.5;  // per transform
    double gamma_min = 0.8, gamma_max = 1.2;
    double contrast_min = 0.8, contrast_max = 1.2;
    double brightness_min = -0.1, brightness_max = 0.1;
};

/// gamma, then contrast about 0.5, then brightness, clamping to [0, 1].
Tensor apply_photometric(const Tensor& image, double gamma, double contrast, double brightness);

/// Draws each transform with probability `params.probability`. Masks are never touched.
Tensor augment(const Tensor& image, std::mt19937_64& rng, const AugmentParams& params);

}  // namespace lslp
