#include "lslp/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "lslp/error.hpp"
#include "lslp/json_reader.hpp"
#include "lslp/optimizer.hpp"
#include "lslp/protonet.hpp"

namespace lslp {

namespace {

const char* averaging_name(ShotAveraging a) { return a == ShotAveraging::ValidShots ? "valid_shots" : "all_shots"; }

ShotAveraging averaging_from(const std::string& s) {
    if (s == "valid_shots") return ShotAveraging::ValidShots;
    if (s == "all_shots") return ShotAveraging::AllShots;
    throw ConfigError("shot_averaging must be \"valid_shots\" or \"all_shots\", got \"" + s + "\"");
}

nlohmann::json to_json(const AugmentParams& a) {
    return {{"enabled", a.enabled},
            {"probability", a.probability},
            {"gamma", {a.gamma_min, a.gamma_max}},
            {"contrast", {a.contrast_min, a.contrast_max}},
            {"brightness", {a.brightness_min, a.brightness_max}}};
}

void read_range(JsonReader& r, const std::string& key, double& lo, double& hi) {
    std::vector<double> v{lo, hi};
    if (!r.get(key, v)) return;
    if (v.size() != 2 || v[0] > v[1]) throw ConfigError(r.path(key) + " must be [min, max]");
    lo = v[0];
    hi = v[1];
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

// Config fields that may change between an interrupted run and its resume.
nlohmann::json resumable_identity(nlohmann::json j) {
    j.erase("total_iterations");
    j.erase("checkpoint_every");
    return j;
}

}  // namespace

nlohmann::json to_json(const TrainConfig& c) {
    return {{"ways", c.episode.ways},
            {"shots", c.episode.shots},
            {"queries", c.episode.queries},
            {"alpha", c.alpha},
            {"stride_fraction", c.stride_fraction},
            {"temperature", c.temperature},
            {"shot_averaging", averaging_name(c.averaging)},
            {"batch_size", c.batch_size},
            {"total_iterations", c.total_iterations},
            {"base_lr", c.base_lr},
            {"decay_factor", c.decay_factor},
            {"decay_every", c.decay_every},
            {"seed", c.seed},
            {"test_classes", c.test_classes},
            {"augment", to_json(c.augment)},
            {"checkpoint_every", c.checkpoint_every},
            {"encoder", to_json(c.arch)}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    JsonReader r(j, "train");
    r.get("ways", c.episode.ways);
    r.get("shots", c.episode.shots);
    r.get("queries", c.episode.queries);
    r.get("alpha", c.alpha);
    r.get("stride_fraction", c.stride_fraction);
    r.get("temperature", c.temperature);
    std::string averaging = averaging_name(c.averaging);
    r.get("shot_averaging", averaging);
    c.averaging = averaging_from(averaging);
    r.get("batch_size", c.batch_size);
    r.get("total_iterations", c.total_iterations);
    r.get("base_lr", c.base_lr);
    r.get("decay_factor", c.decay_factor);
    r.get("decay_every", c.decay_every);
    r.get("seed", c.seed);
    r.get("test_classes", c.test_classes);
    if (const auto* a = r.child("augment")) {
        JsonReader ar(*a, r.path("augment"));
        ar.get("enabled", c.augment.enabled);
        ar.get("probability", c.augment.probability);
        read_range(ar, "gamma", c.augment.gamma_min, c.augment.gamma_max);
        read_range(ar, "contrast", c.augment.contrast_min, c.augment.contrast_max);
        read_range(ar, "brightness", c.augment.brightness_min, c.augment.brightness_max);
        ar.finish();
    }
    r.get("checkpoint_every", c.checkpoint_every);
    if (const auto* e = r.child("encoder")) {
        try {
            c.arch = arch_from_json(*e);
        } catch (const nlohmann::json::exception& ex) {
            throw ConfigError("train.encoder: " + std::string(ex.what()));
        }
    }
    r.finish();

    if (c.episode.ways == 0 || c.episode.shots == 0 || c.episode.queries == 0)
        throw ConfigError("train: ways, shots and queries must be positive");
    if (c.batch_size == 0) throw ConfigError("train.batch_size must be positive");
    if (c.decay_every == 0) throw ConfigError("train.decay_every must be positive");
    if (!(c.temperature > 0)) throw ConfigError("train.temperature must be positive");
    if (!(c.base_lr >= 0)) throw ConfigError("train.base_lr must be non-negative");
    return c;
}

std::string model_fingerprint(const TrainConfig& config, ImageShape image) {
    const nlohmann::json j{{"encoder", to_json(config.arch)},
                           {"alpha", config.alpha},
                           {"stride_fraction", config.stride_fraction},
                           {"temperature", config.temperature},
                           {"shot_averaging", averaging_name(config.averaging)},
                           {"image", {image.width, image.height}}};
    return hex(fnv1a(j.dump()));
}

std::shared_ptr<const GridSet> feature_grids(const TrainConfig& config, ImageShape image) {
    const std::size_t f = config.arch.downsample();
    if (image.width % f != 0 || image.height % f != 0)
        throw ConfigError("image size must be divisible by the encoder downsample factor " + std::to_string(f));
    const GridSet full = GridSet::build(image, config.alpha, config.stride_fraction);
    return std::make_shared<const GridSet>(full.project({image.width / f, image.height / f}));
}

NodeId episode_loss(Graph& graph, const Episode& episode, const EncoderParams& params,
                    std::span<const NodeId> param_nodes, const TrainConfig& config,
                    std::shared_ptr<const GridSet> grids) {
    if (episode.classes.size() != config.episode.ways)
        throw ConfigError("episode has " + std::to_string(episode.classes.size()) + " classes but the config expects " +
                          std::to_string(config.episode.ways));
    if (episode.support.empty() || episode.query.empty()) throw DataError("episode needs support and query images");
    const ImageShape image{episode.support.front().image.dim(2), episode.support.front().image.dim(1)};
    const ImageShape feature = grids->shape();

    std::vector<NodeId> support;
    std::vector<Tensor> weights;
    for (const auto& s : episode.support) {
        support.push_back(encode(graph, graph.input(s.image, "support"), params, param_nodes));
        weights.push_back(class_weights(s.masks, image, feature));
    }

    std::optional<NodeId> total;
    for (const auto& q : episode.query) {
        const NodeId qf = encode(graph, graph.input(q.image, "query"), params, param_nodes);
        const NodeId scores = build_local_scores(graph, support, weights, qf, grids, config.averaging);
        const NodeId ce = graph.softmax_cross_entropy(graph.scale(scores, config.temperature, "logits"),
                                                      soft_targets(q.masks, image, feature), "ce");
        total = total ? graph.add(*total, ce) : ce;
    }
    if (episode.query.size() == 1) return *total;
    return graph.scale(*total, 1.0f / static_cast<float>(episode.query.size()), "query_mean");
}

void write_loss_csv(const std::filesystem::path& path, std::span<const LossRow> rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << "iteration,lr,loss\n";
    char buf[96];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.9g\n", r.iteration, r.lr, r.loss);
        out << buf;
    }
}

std::vector<LossRow> read_loss_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read " + path.string());
    std::string line;
    std::getline(in, line);
    if (line != "iteration,lr,loss") throw DataError(path.string() + ": unexpected header");
    std::vector<LossRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        LossRow r;
        if (std::sscanf(line.c_str(), "%zu,%lf,%lf", &r.iteration, &r.lr, &r.loss) != 3)
            throw DataError(path.string() + ": malformed row \"" + line + "\"");
        rows.push_back(r);
    }
    return rows;
}

std::vector<double> smoothed_loss(std::span<const LossRow> rows, std::size_t window) {
    if (window == 0) throw ConfigError("smoothing window must be positive");
    std::vector<double> out(rows.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        sum += rows[i].loss;
        if (i >= window) sum -= rows[i - window].loss;
        out[i] = sum / static_cast<double>(std::min(i + 1, window));
    }
    return out;
}

std::filesystem::path checkpoint_path(const std::filesystem::path& out_dir, std::size_t iteration) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "iter_%06zu", iteration);
    return out_dir / "checkpoints" / buf;
}

TrainResult train(const TrainConfig& config, const Dataset& dataset, const TrainOptions& options) {
    const ClassSplit split = split_classes(dataset.class_ids(), config.test_classes);
    const auto grids = feature_grids(config, dataset.shape);
    const nlohmann::json config_json = to_json(config);

    TrainResult result;
    Checkpoint& ckpt = result.checkpoint;
    ckpt.fingerprint = model_fingerprint(config, dataset.shape);
    ckpt.seed = config.seed;
    ckpt.config = config_json;
    ckpt.optimizer = {config.base_lr, config.decay_factor, config.decay_every, 0};
    ckpt.params = init_params(config.arch, derive_seed(config.seed, 0, 0, 0xe1c0de));

    if (options.resume) {
        Checkpoint prev = load_checkpoint(*options.resume);
        if (prev.fingerprint != ckpt.fingerprint || prev.seed != config.seed ||
            resumable_identity(prev.config) != resumable_identity(config_json))
            throw ConfigError("checkpoint " + options.resume->string() + " was produced by a different run configuration");
        if (prev.optimizer.iteration > config.total_iterations)
            throw ConfigError("checkpoint is already past total_iterations");
        ckpt.params = std::move(prev.params);
        ckpt.optimizer = prev.optimizer;
        if (!options.out_dir.empty() && std::filesystem::exists(options.out_dir / "loss.csv"))
            for (const auto& row : read_loss_csv(options.out_dir / "loss.csv"))
                if (row.iteration < ckpt.optimizer.iteration) result.curve.push_back(row);
    }

    const bool persist = !options.out_dir.empty();
    if (persist) std::filesystem::create_directories(options.out_dir);
    std::optional<std::filesystem::path> last_saved = options.resume;
    auto save_at = [&](std::size_t it) {
        const auto dir = checkpoint_path(options.out_dir, it);
        save_checkpoint(dir, ckpt);
        last_saved = dir;
    };

    for (std::size_t t = ckpt.optimizer.iteration; t < config.total_iterations; ++t) {
        Graph graph;
        const std::vector<NodeId> param_nodes = add_parameters(graph, ckpt.params);
        std::optional<NodeId> total;
        for (std::size_t b = 0; b < config.batch_size; ++b) {
            Episode ep = sample_episode(dataset, split, SplitSide::Train, config.episode, derive_seed(config.seed, t, b, 1));
            std::mt19937_64 rng(derive_seed(config.seed, t, b, 2));
            for (auto* side : {&ep.support, &ep.query})
                for (auto& img : *side) img.image = augment(img.image, rng, config.augment);
            const NodeId l = episode_loss(graph, ep, ckpt.params, param_nodes, config, grids);
            total = total ? graph.add(*total, l) : l;
        }
        graph.scale(*total, 1.0f / static_cast<float>(config.batch_size), "batch_mean");
        const float loss = graph.forward().item();
        if (!std::isfinite(loss)) {
            if (persist) write_loss_csv(options.out_dir / "loss.csv", result.curve);
            throw NumericError("non-finite loss at iteration " + std::to_string(t) +
                               (last_saved ? "; last checkpoint: " + last_saved->string() : "; no checkpoint saved"));
        }
        graph.backward();

        std::vector<Tensor> grads;
        for (auto id : param_nodes) grads.push_back(graph.grad(id));
        const LossRow row{t, ckpt.optimizer.current_lr(), loss};
        sgd_step(ckpt.params.tensors, grads, ckpt.optimizer);
        result.curve.push_back(row);
        if (options.on_step) options.on_step(row);
        if (persist && config.checkpoint_every > 0 && (t + 1) % config.checkpoint_every == 0 &&
            t + 1 < config.total_iterations)
            save_at(t + 1);
    }

    if (persist) {
        write_loss_csv(options.out_dir / "loss.csv", result.curve);
        save_at(ckpt.optimizer.iteration);
        std::filesystem::remove_all(options.out_dir / "final");
        save_checkpoint(options.out_dir / "final", ckpt);
    }
    return result;
}

}  // namespace lslp
