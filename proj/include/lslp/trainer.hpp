#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "lslp/encoder.hpp"
#include "lslp/episodes.hpp"
#include "lslp/geometry.hpp"
#include "lslp/graph.hpp"
#include "lslp/kernels.hpp"

namespace lslp {

struct TrainConfig {
    EpisodeShape episode{1, 1, 1};
    double alpha = 0.125;
    double stride_fraction = 0.5;
    float temperature = 20.0f;
    ShotAveraging averaging = ShotAveraging::ValidShots;
    std::size_t batch_size = 4;  // episodes per step
    std::size_t total_iterations = 10000;
    double base_lr = 1e-3;
    double decay_factor = 0.1;
    std::size_t decay_every = 2500;
    std::uint64_t seed = 0;
    std::vector<int> test_classes{4, 5};
    AugmentParams augment;
    std::size_t checkpoint_every = 500;  // 0 keeps only the final checkpoint
    EncoderArch arch;
};

nlohmann::json to_json(const TrainConfig& config);
/// Unknown keys are rejected; missing keys keep their defaults.
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Identity of everything that shapes the learned model's interface: arch,
/// grid geometry, temperature, shot averaging and working image size.
/// Evaluating a checkpoint under a different fingerprint is an error.
std::string model_fingerprint(const TrainConfig& config, ImageShape image);

/// Image-space grids projected onto the encoder's feature map.
std::shared_ptr<const GridSet> feature_grids(const TrainConfig& config, ImageShape image);

/// Records the mean cross-entropy over the episode's queries in `graph` and
/// returns the scalar node.
NodeId episode_loss(Graph& graph, const Episode& episode, const EncoderParams& params,
                    std::span<const NodeId> param_nodes, const TrainConfig& config,
                    std::shared_ptr<const GridSet> grids);

struct LossRow {
    std::size_t iteration = 0;
    double lr = 0.0;
    double loss = 0.0;
};

void write_loss_csv(const std::filesystem::path& path, std::span<const LossRow> rows);
std::vector<LossRow> read_loss_csv(const std::filesystem::path& path);
/// Trailing moving average over `window` rows.
std::vector<double> smoothed_loss(std::span<const LossRow> rows, std::size_t window);

struct TrainOptions {
    std::filesystem::path out_dir;                 // empty: keep everything in memory
    std::optional<std::filesystem::path> resume;   // checkpoint directory
    std::function<void(const LossRow&)> on_step;  // progress hook
};

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<LossRow> curve;
};

/// Episodic SGD. Writes <out>/loss.csv, <out>/checkpoints/iter_NNNNNN at the
/// configured cadence and <out>/final. Fully determined by the config seed.
TrainResult train(const TrainConfig& config, const Dataset& dataset, const TrainOptions& options = {});

std::filesystem::path checkpoint_path(const std::filesystem::path& out_dir, std::size_t iteration);

}  // namespace lslp
