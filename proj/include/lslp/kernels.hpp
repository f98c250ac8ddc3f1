#pragma once

// OpenMP-parallel compute kernels shared by the differentiable graph and the
// graph-free inference path. Work is split over output slices only, so every
// output element is summed in a fixed order and results do not depend on the
// thread count.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "lslp/geometry.hpp"
#include "lslp/tensor.hpp"

namespace lslp {

/// Denominator floor for cosine similarity.
inline constexpr float kCosineEps = 1e-8f;

/// Score assigned to a class with no present prototype among the covering grids.
inline constexpr float kScoreAbsent = -1.0f;

/// In-grid weight mass at or below which a shot contributes nothing.
inline constexpr float kMaskEps = 1e-6f;

enum class ShotAveraging {
    ValidShots,  // mean over shots whose in-grid mask is non-empty
    AllShots,    // 1/k over all shots, empty shots contributing zero
};

namespace kernels {

// input (Cin, H, W), weight (Cout, Cin, K, K), stride 1, zero padding `pad`.
Tensor conv2d_forward(const Tensor& input, const Tensor& weight, std::size_t pad);
void conv2d_backward_input(const Tensor& grad_out, const Tensor& weight, std::size_t pad, Tensor& grad_input);
void conv2d_backward_weight(const Tensor& grad_out, const Tensor& input, std::size_t pad, Tensor& grad_weight);

// bias (C) broadcast over (C, H, W).
Tensor bias_add_forward(const Tensor& input, const Tensor& bias);

struct MaxPoolResult {
    Tensor output;
    std::vector<std::uint32_t> argmax;  // flat input index per output element
    float min_margin = 0.0f;            // smallest gap between window max and runner-up
};

// 2x2 window, stride 2; H and W must be even.
MaxPoolResult max_pool2_forward(const Tensor& input);
void max_pool2_backward(const Tensor& grad_out, std::span<const std::uint32_t> argmax, Tensor& grad_input);

/// Local prototypes for every (class, grid) from k shots.
struct PooledPrototypes {
    Tensor vectors;                     // (C, n_g, d)
    std::vector<std::uint8_t> present;  // C * n_g
    std::vector<float> shot_scale;      // k * C * n_g: coefficient / in-grid weight sum, 0 for empty shots
};

// A (class, grid) prototype is present when some shot has in-grid weight mass
// above kMaskEps. Depends on the masks only.
std::vector<std::uint8_t> prototype_presence(std::span<const Tensor* const> weights, const GridSet& grids);

// features: k tensors (d, H, W); weights: k tensors (C, H, W) in [0, 1].
PooledPrototypes masked_pool_forward(std::span<const Tensor* const> features, std::span<const Tensor* const> weights,
                                     const GridSet& grids, ShotAveraging averaging);
void masked_pool_backward(const Tensor& grad_vectors, std::span<const Tensor* const> weights, const GridSet& grids,
                          const PooledPrototypes& pooled, std::span<Tensor* const> grad_features);

// field (d, H, W) against protos (C, n_g, d): cosine inside every grid window,
// output (C, n_g, gh, gw).
Tensor grid_cosine_forward(const Tensor& field, const Tensor& protos, const GridSet& grids);
void grid_cosine_backward(const Tensor& grad_out, const Tensor& field, const Tensor& protos, const GridSet& grids,
                          Tensor* grad_field, Tensor* grad_protos);

struct GridMaxResult {
    Tensor scores;                     // (C, H, W)
    std::vector<std::int32_t> winner;  // winning grid id per output, -1 if no present prototype
    float min_margin = 0.0f;           // smallest gap between winner and runner-up
};

// window_scores (C, n_g, gh, gw); present C * n_g. Ties go to the lowest grid id.
GridMaxResult max_over_grids_forward(const Tensor& window_scores, std::span<const std::uint8_t> present,
                                     const GridSet& grids);
void max_over_grids_backward(const Tensor& grad_out, std::span<const std::int32_t> winner, const GridSet& grids,
                             Tensor& grad_window_scores);

// Softmax over axis 0 of a (C, H, W) tensor.
Tensor softmax_channels(const Tensor& logits);

// Mean over pixels of -sum_c target * log softmax(logits). When grad is
// non-null it receives d loss / d logits.
double softmax_cross_entropy(const Tensor& logits, const Tensor& target, Tensor* grad);

}  // namespace kernels

/// Straightforward serial versions of the heavy kernels, kept as a
/// reference for the parallel ones and for benchmarking.
namespace reference {

Tensor conv2d_forward(const Tensor& input, const Tensor& weight, std::size_t pad);
Tensor conv2d_backward_input(const Tensor& grad_out, const Tensor& weight, std::size_t pad, const Shape& input_shape);
Tensor conv2d_backward_weight(const Tensor& grad_out, const Tensor& input, std::size_t pad, const Shape& weight_shape);
Tensor max_pool2_forward(const Tensor& input);
kernels::PooledPrototypes masked_pool_forward(std::span<const Tensor* const> features, std::span<const Tensor* const> weights,
                                     const GridSet& grids, ShotAveraging averaging);
Tensor local_similarity(const Tensor& field, const Tensor& protos, std::span<const std::uint8_t> present,
                        const GridSet& grids);

}  // namespace reference

}  // namespace lslp
