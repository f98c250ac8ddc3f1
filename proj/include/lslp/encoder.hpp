#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "lslp/graph.hpp"
#include "lslp/optimizer.hpp"
#include "lslp/tensor.hpp"

namespace lslp {

struct ConvLayerSpec {
    std::size_t channels = 0;
    bool pool = false;  // 2x2 max-pool after the relu
    friend bool operator==(const ConvLayerSpec&, const ConvLayerSpec&) = default;
};

/// 3x3 conv (zero pad 1) + relu [+ 2x2 max-pool] stack.
struct EncoderArch {
    std::size_t input_channels = 1;
    std::vector<ConvLayerSpec> layers{{16, true}, {32, true}, {64, false}};

    std::size_t depth() const;
    std::size_t downsample() const;
    friend bool operator==(const EncoderArch&, const EncoderArch&) = default;
};

nlohmann::json to_json(const EncoderArch& arch);
EncoderArch arch_from_json(const nlohmann::json& j);

struct EncoderParams {
    EncoderArch arch;
    std::vector<Tensor> tensors;  // weight, bias per layer
    std::vector<std::string> names;
};

/// Xavier-uniform weights with bound sqrt(6 / (fan_in + fan_out)) over 3x3
/// receptive fields, zero biases.
EncoderParams init_params(const EncoderArch& arch, std::uint64_t seed);

/// Graph-free inference: (Cin, H, W) image -> (d, H / f, W / f) features.
Tensor encode(const Tensor& image, const EncoderParams& params);

/// Records the same computation in `graph`; `param_nodes` come from add_parameters().
NodeId encode(Graph& graph, NodeId image, const EncoderParams& params, std::span<const NodeId> param_nodes);
std::vector<NodeId> add_parameters(Graph& graph, const EncoderParams& params);

/// Trainer snapshot: parameters, optimizer schedule and the run identity.
struct Checkpoint {
    EncoderParams params;
    OptimizerState optimizer;
    std::string fingerprint;
    std::uint64_t seed = 0;
    nlohmann::json config;  // resolved training config that produced the run
};

/// Directory with manifest.json plus params/<name>.lslp per tensor.
void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace lslp
