#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "lslp/encoder.hpp"
#include "lslp/episodes.hpp"
#include "lslp/tensor.hpp"
#include "lslp/trainer.hpp"

namespace lslp {

/// 2|A n B| / (|A| + |B|) over binary masks; 1.0 when both are empty.
double dice(const Tensor& pred, const Tensor& truth);

struct EvalConfig {
    std::size_t n_episodes = 200;
    std::uint64_t seed = 1;
    EpisodeShape episode{1, 1, 1};
    std::vector<int> classes;  // restricts the test classes; empty means all
    bool allow_mismatch = false;
    std::size_t overlays = 0;  // keep predictions of the first N episodes
};

nlohmann::json to_json(const EvalConfig& config);
EvalConfig eval_config_from_json(const nlohmann::json& j);

/// One (episode, class) outcome. Alignment Dice compares the support masks
/// with the query mask (mean over shots); both values average over queries.
struct EvalRow {
    std::uint64_t episode_seed = 0;
    int class_id = 0;
    double alignment_dice = 0.0;
    double segmentation_dice = 0.0;
    friend bool operator==(const EvalRow&, const EvalRow&) = default;
};

struct ClassSummary {
    int class_id = 0;
    std::size_t episodes = 0;
    double mean = 0.0;
    double stddev = 0.0;  // population
    double alignment_mean = 0.0;
};

struct Overlay {
    std::uint64_t episode_seed = 0;
    std::vector<int> classes;
    Tensor image;   // (1, H, W)
    Tensor labels;  // (H, W): 0 background, i + 1 for classes[i]
};

struct EvalReport {
    std::string fingerprint;
    std::vector<EvalRow> rows;  // ordered by episode, then episode class order
    std::vector<ClassSummary> classes;
    std::vector<Overlay> overlays;

    /// Macro average of the per-class means.
    double mean_dice() const;
};

/// Per-class mean and spread recomputed from rows, ordered by class id.
std::vector<ClassSummary> summarize(std::span<const EvalRow> rows);

/// Samples test episodes (seed derived per episode) and segments every query
/// with prototypes from its support set. `model` supplies the grid geometry
/// and temperature; its fingerprint must match the checkpoint unless
/// `allow_mismatch` is set.
EvalReport evaluate(const Checkpoint& checkpoint, const Dataset& dataset, const TrainConfig& model,
                    const EvalConfig& config);

void write_report_csv(const std::filesystem::path& path, const EvalReport& report);
/// Rows only; summaries are recomputed and the fingerprint is left empty.
EvalReport read_report_csv(const std::filesystem::path& path);
nlohmann::json summary_json(const EvalReport& report);

/// Reports paired classes (left/right variants) as one column: each group's
/// rows are relabelled to the group's first id and rows of one episode are
/// averaged. A class may appear in at most one group.
EvalReport merge_classes(const EvalReport& report, const std::vector<std::vector<int>>& groups);
/// Parses "4+5,0+1" into groups.
std::vector<std::vector<int>> parse_class_groups(const std::string& text);

struct SweepSetting {
    double alpha = 0.125;
    bool overlap = true;  // off sets the grid stride to a full grid width
};

struct SweepRow {
    SweepSetting setting;
    double stride_fraction = 0.5;
    double mean_dice = 0.0;
    std::vector<ClassSummary> classes;
};

struct SweepOptions {
    /// Evaluate these parameters under every geometry instead of training one
    /// model per setting.
    std::optional<EncoderParams> fixed_params;
    std::filesystem::path out_dir;  // per-setting training output, empty for none
    std::function<void(const SweepSetting&, const LossRow&)> on_step;
};

/// Trains (or only evaluates) every setting from the same seed and evaluates
/// on the same test episodes.
std::vector<SweepRow> sweep_alpha(const TrainConfig& base, const Dataset& dataset, const EvalConfig& eval,
                                  std::span<const SweepSetting> settings, const SweepOptions& options = {});

void write_sweep_csv(const std::filesystem::path& path, std::span<const SweepRow> rows);
std::string setting_label(const SweepSetting& s);

struct ScatterPoint {
    int class_id = 0;
    double alignment_dice = 0.0;
    double segmentation_dice = 0.0;
    friend bool operator==(const ScatterPoint&, const ScatterPoint&) = default;
};

/// (alignment, segmentation) pairs, one per report row, grouped by class id.
std::vector<ScatterPoint> misalignment_points(const EvalReport& report);
void write_scatter_csv(const std::filesystem::path& path, std::span<const ScatterPoint> points);
std::vector<ScatterPoint> read_scatter_csv(const std::filesystem::path& path);

}  // namespace lslp
