#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lslp/geometry.hpp"
#include "lslp/kernels.hpp"
#include "lslp/tensor.hpp"

namespace lslp {

struct NodeId {
    std::uint32_t index = 0;
    friend auto operator<=>(const NodeId&, const NodeId&) = default;
};

enum class OpTag {
    Input,
    Parameter,
    Conv2d,
    BiasAdd,
    Relu,
    MaxPool2,
    MaskedPool,
    CosineMap,
    GridCosine,
    MaxOverGrids,
    Scale,
    Add,
    Mul,
    Sum,
    SoftmaxCrossEntropy,
};

std::string_view op_name(OpTag tag);

namespace detail {

// Double-precision mirror of a tensor, used by the finite-difference oracle.
struct Values64 {
    Shape shape;
    std::vector<double> v;
};

class Op {
public:
    virtual ~Op() = default;
    virtual OpTag tag() const = 0;
    virtual Tensor forward(std::span<const Tensor* const> inputs) = 0;
    // Accumulates into every non-null grad_inputs entry.
    virtual void backward(std::span<const Tensor* const> inputs, const Tensor& output, const Tensor& grad_out,
                          std::span<Tensor* const> grad_inputs) = 0;
    // Folds the discrete choices of the last forward (relu signs, argmaxes) into h.
    virtual std::uint64_t decisions(std::uint64_t h) const { return h; }
    // Serial 64-bit forward. Folds its discrete choices into `h` exactly as
    // decisions() does, so signatures of both passes are comparable.
    virtual Values64 forward64(std::span<const Values64* const> inputs, std::uint64_t& h) const;
};

}  // namespace detail

/// Define-by-run reverse-mode graph.
///
/// Builder calls only record nodes; forward() evaluates them in insertion
/// order, which is a topological order by construction. Leaves can be
/// reassigned with set_value() and the graph re-run, which is how the
/// finite-difference checker perturbs parameters. Not safe for concurrent
/// use; distinct graphs are independent.
class Graph {
public:
    Graph();
    ~Graph();
    Graph(Graph&&) noexcept;
    Graph& operator=(Graph&&) noexcept;

    NodeId input(Tensor value, std::string name = "input");
    NodeId parameter(Tensor value, std::string name);

    NodeId conv2d(NodeId x, NodeId weight, std::size_t pad, std::string name = {});
    NodeId bias_add(NodeId x, NodeId bias, std::string name = {});
    NodeId relu(NodeId x, std::string name = {});
    NodeId max_pool2(NodeId x, std::string name = {});

    /// Local prototypes (C, n_g, d) from k support feature maps and constant
    /// per-shot class weights (C, H, W).
    NodeId masked_pool(std::vector<NodeId> features, std::vector<Tensor> weights,
                       std::shared_ptr<const GridSet> grids, ShotAveraging averaging, std::string name = {});
    /// Cosine between every vector of a (d, H, W) field and a (d) vector -> (H, W).
    NodeId cosine_map(NodeId field, NodeId vector, std::string name = {});
    /// Cosine of a (d, H, W) field against (C, n_g, d) prototypes inside each grid -> (C, n_g, gh, gw).
    NodeId grid_cosine(NodeId field, NodeId protos, std::shared_ptr<const GridSet> grids, std::string name = {});
    /// Per-pixel max over covering grids with present prototypes -> (C, H, W).
    NodeId max_over_grids(NodeId window_scores, std::vector<std::uint8_t> present,
                          std::shared_ptr<const GridSet> grids, std::string name = {});

    NodeId scale(NodeId x, float factor, std::string name = {});
    NodeId add(NodeId a, NodeId b, std::string name = {});
    NodeId mul(NodeId a, NodeId b, std::string name = {});
    NodeId sum(NodeId x, std::string name = {});
    /// Pixel-mean cross-entropy of softmax over axis 0 of (C, H, W) logits against a constant target.
    NodeId softmax_cross_entropy(NodeId logits, Tensor target, std::string name = {});

    /// Evaluates every node; returns the value of the last one.
    const Tensor& forward();
    /// Reverse sweep from the last node, which must be a scalar.
    void backward();

    const Tensor& value(NodeId id) const;
    const Tensor& grad(NodeId id) const;
    void set_value(NodeId leaf, Tensor value);

    std::size_t size() const;
    NodeId last() const;
    OpTag tag(NodeId id) const;
    const std::string& name(NodeId id) const;
    std::vector<NodeId> parameters() const;
    bool forwarded() const { return forwarded_; }

    /// Hash of every discrete choice made by the last forward pass.
    std::uint64_t decision_signature() const;

    /// Re-evaluates the loss in 64-bit arithmetic with entry `index` of leaf
    /// `leaf` shifted by `delta`. `signature` receives the decision hash of
    /// that pass. Needs a prior forward().
    double forward64(NodeId leaf, std::size_t index, double delta, std::uint64_t& signature) const;

private:
    struct Node;
    NodeId push(std::unique_ptr<detail::Op> op, std::vector<NodeId> inputs, std::string name);
    const Node& node(NodeId id) const;
    std::string describe(NodeId id) const;

    std::vector<Node> nodes_;
    bool forwarded_ = false;
    bool backwarded_ = false;
};

struct GradCheckOptions {
    double step = 1e-3;
    std::size_t samples = 64;
    std::uint64_t seed = 0;
};

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::size_t checked = 0;
    std::size_t skipped = 0;  // perturbation changed a discrete decision (kink or near-tie)
};

/// Central finite differences, evaluated in 64-bit, against backward() on
/// sampled parameter entries. A sample is skipped when either perturbed pass
/// makes a different relu sign, pool argmax or grid winner choice than the
/// 32-bit forward, so kinks and near-ties never enter the comparison. The
/// graph is left forwarded at its original values.
GradCheckResult grad_check(Graph& graph, std::span<const NodeId> params, const GradCheckOptions& options = {});

}  // namespace lslp
