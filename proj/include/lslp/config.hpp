#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "json.hpp"
#include "lslp/episodes.hpp"
#include "lslp/metrics.hpp"
#include "lslp/synthgen.hpp"
#include "lslp/trainer.hpp"

namespace lslp {

inline constexpr int kRunConfigSchemaVersion = 1;

/// Everything one experiment needs. Without `dataset`, the phantom corpus is
/// generated in memory from `phantom`.
struct RunConfig {
    PhantomSpec phantom = default_phantom_spec();
    std::optional<std::filesystem::path> dataset;
    std::optional<ImageShape> working_size;  // resize on load
    TrainConfig train;
    EvalConfig eval;
    std::filesystem::path output_dir = "runs/default";
};

nlohmann::json to_json(const RunConfig& config);
/// Unknown keys are rejected at every level; missing keys keep defaults.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
/// Pretty-printed resolved config.
void save_run_config(const std::filesystem::path& path, const RunConfig& config);

/// Loads `dataset` or renders the phantom corpus.
Dataset resolve_dataset(const RunConfig& config);

}  // namespace lslp
