#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include "lslp/geometry.hpp"
#include "lslp/graph.hpp"
#include "lslp/kernels.hpp"
#include "lslp/tensor.hpp"

namespace lslp {

/// Read-only view of one p_{c,g_m} entry.
struct Prototype {
    std::size_t class_id = 0;  // 0 is background
    std::size_t grid_id = 0;
    std::span<const float> vector;
    bool present = false;
};

/// Dense (n + 1) x n_g table of local prototypes. Absent entries are all-zero.
struct PrototypeSet {
    Tensor vectors;                     // (n + 1, n_g, d)
    std::vector<std::uint8_t> present;  // (n + 1) * n_g
    std::size_t n_classes = 0;          // foreground classes n
    std::shared_ptr<const GridSet> grids;

    std::size_t depth() const { return vectors.dim(2); }
    std::size_t grid_count() const { return vectors.dim(1); }
    Prototype entry(std::size_t class_id, std::size_t grid_id) const;
};

/// Per-class score maps (n + 1, H, W) with the pixels where a class had no
/// present prototype among the covering grids.
struct SimilarityMap {
    Tensor scores;
    std::vector<std::uint8_t> absent;
};

/// Softmax over classes of temperature * score, per pixel.
struct ProbabilityMap {
    Tensor probs;  // (n + 1, H, W)
    std::vector<std::uint8_t> absent;
};

/// 1 - union(foreground). Masks must be binary, equally shaped and disjoint.
Tensor background_mask(std::span<const Tensor> foreground, ImageShape shape);

/// Average-pools a binary (H, W) mask to feature resolution.
Tensor downsample_mask(const Tensor& mask, ImageShape feature);

/// Stacks background followed by the foreground masks and downsamples each:
/// (n + 1, Hf, Wf) soft weights.
Tensor class_weights(std::span<const Tensor> foreground, ImageShape image, ImageShape feature);

/// Soft per-pixel target distribution from image-resolution masks; the
/// background channel absorbs whatever mass the foreground classes leave.
Tensor soft_targets(std::span<const Tensor> foreground, ImageShape image, ImageShape feature);

/// Masked average pooling of k support feature maps inside every grid.
PrototypeSet extract_prototypes(std::span<const Tensor> features, std::span<const Tensor> weights,
                                std::shared_ptr<const GridSet> grids,
                                ShotAveraging averaging = ShotAveraging::ValidShots);

/// Max over covering grids of the cosine between query features and local prototypes.
SimilarityMap similarity_map(const Tensor& query_features, const PrototypeSet& protos);

ProbabilityMap probability_map(const SimilarityMap& scores, float temperature);

/// Per-pixel argmax at feature resolution. Ties prefer classes with a
/// present prototype, then the lowest class id.
Tensor argmax_labels(const ProbabilityMap& probs);
Tensor upsample_nearest(const Tensor& labels, ImageShape image);
Tensor predict_labels(const ProbabilityMap& probs, ImageShape image);

/// Differentiable pooling -> similarity path: returns the (n + 1, H, W) score node.
NodeId build_local_scores(Graph& graph, std::span<const NodeId> support_features, std::vector<Tensor> weights,
                          NodeId query_features, std::shared_ptr<const GridSet> grids, ShotAveraging averaging);

/// Writes <stem>.lslp (vectors) and <stem>.json (class ids, grid ids, presence).
void save_prototypes(const std::filesystem::path& stem, const PrototypeSet& protos);
PrototypeSet load_prototypes(const std::filesystem::path& stem, std::shared_ptr<const GridSet> grids);

/// Running record of how far every ProbabilityMap built in this process
/// strays from summing to one per pixel.
struct ProbabilityAudit {
    std::uint64_t maps = 0;
    double max_deviation = 0.0;
};
ProbabilityAudit probability_audit();

}  // namespace lslp
