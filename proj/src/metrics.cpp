#include "lslp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "lslp/error.hpp"
#include "lslp/json_reader.hpp"
#include "lslp/protonet.hpp"

namespace lslp {

double dice(const Tensor& pred, const Tensor& truth) {
    if (pred.shape() != truth.shape())
        throw ShapeError("dice: mask shapes differ, " + shape_string(pred.shape()) + " vs " +
                         shape_string(truth.shape()));
    std::size_t a = 0, b = 0, both = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] != 0.0f, t = truth[i] != 0.0f;
        a += p;
        b += t;
        both += p && t;
    }
    if (a + b == 0) return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
}

nlohmann::json to_json(const EvalConfig& c) {
    return {{"n_episodes", c.n_episodes},
            {"seed", c.seed},
            {"ways", c.episode.ways},
            {"shots", c.episode.shots},
            {"queries", c.episode.queries},
            {"classes", c.classes},
            {"allow_mismatch", c.allow_mismatch},
            {"overlays", c.overlays}};
}

EvalConfig eval_config_from_json(const nlohmann::json& j) {
    EvalConfig c;
    JsonReader r(j, "eval");
    r.get("n_episodes", c.n_episodes);
    r.get("seed", c.seed);
    r.get("ways", c.episode.ways);
    r.get("shots", c.episode.shots);
    r.get("queries", c.episode.queries);
    r.get("classes", c.classes);
    r.get("allow_mismatch", c.allow_mismatch);
    r.get("overlays", c.overlays);
    r.finish();
    if (c.episode.ways == 0 || c.episode.shots == 0 || c.episode.queries == 0)
        throw ConfigError("eval: ways, shots and queries must be positive");
    return c;
}

double EvalReport::mean_dice() const {
    if (classes.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& c : classes) sum += c.mean;
    return sum / static_cast<double>(classes.size());
}

std::vector<ClassSummary> summarize(std::span<const EvalRow> rows) {
    std::map<int, std::vector<const EvalRow*>> by_class;
    for (const auto& r : rows) by_class[r.class_id].push_back(&r);
    std::vector<ClassSummary> out;
    for (const auto& [id, list] : by_class) {
        ClassSummary s;
        s.class_id = id;
        s.episodes = list.size();
        for (const auto* r : list) {
            s.mean += r->segmentation_dice;
            s.alignment_mean += r->alignment_dice;
        }
        s.mean /= static_cast<double>(list.size());
        s.alignment_mean /= static_cast<double>(list.size());
        double var = 0.0;
        for (const auto* r : list) var += (r->segmentation_dice - s.mean) * (r->segmentation_dice - s.mean);
        s.stddev = std::sqrt(var / static_cast<double>(list.size()));
        out.push_back(s);
    }
    return out;
}

EvalReport evaluate(const Checkpoint& checkpoint, const Dataset& dataset, const TrainConfig& model,
                    const EvalConfig& config) {
    EvalReport report;
    report.fingerprint = model_fingerprint(model, dataset.shape);
    if (checkpoint.fingerprint != report.fingerprint && !config.allow_mismatch)
        throw ConfigError("checkpoint fingerprint " + checkpoint.fingerprint + " does not match the evaluation config (" +
                          report.fingerprint + "); pass the mismatch override to evaluate anyway");
    if (checkpoint.params.arch != model.arch) throw ConfigError("checkpoint encoder differs from the configured encoder");

    const ClassSplit split = split_classes(dataset.class_ids(), model.test_classes);
    for (int c : config.classes)
        if (std::find(split.test.begin(), split.test.end(), c) == split.test.end())
            throw ConfigError("class " + std::to_string(c) + " is not a test class");
    const auto grids = feature_grids(model, dataset.shape);
    const ImageShape image = dataset.shape;

    for (std::size_t e = 0; e < config.n_episodes; ++e) {
        const std::uint64_t seed = derive_seed(config.seed, e);
        const Episode ep = sample_episode(dataset, split, SplitSide::Test, config.episode, seed, config.classes);

        std::vector<Tensor> features, weights;
        for (const auto& s : ep.support) {
            features.push_back(encode(s.image, checkpoint.params));
            weights.push_back(class_weights(s.masks, image, grids->shape()));
        }
        const PrototypeSet protos = extract_prototypes(features, weights, grids, model.averaging);

        std::vector<double> seg(ep.classes.size(), 0.0), align(ep.classes.size(), 0.0);
        for (const auto& q : ep.query) {
            const ProbabilityMap probs = probability_map(similarity_map(encode(q.image, checkpoint.params), protos),
                                                         model.temperature);
            const Tensor labels = predict_labels(probs, image);
            for (std::size_t i = 0; i < ep.classes.size(); ++i) {
                Tensor pred(labels.shape());
                for (std::size_t p = 0; p < labels.size(); ++p) pred[p] = labels[p] == static_cast<float>(i + 1);
                seg[i] += dice(pred, q.masks[i]);
                double a = 0.0;
                for (const auto& s : ep.support) a += dice(s.masks[i], q.masks[i]);
                align[i] += a / static_cast<double>(ep.support.size());
            }
            if (report.overlays.size() < config.overlays && &q == &ep.query.front())
                report.overlays.push_back({seed, ep.classes, q.image, labels});
        }
        const double nq = static_cast<double>(ep.query.size());
        for (std::size_t i = 0; i < ep.classes.size(); ++i)
            report.rows.push_back({seed, ep.classes[i], align[i] / nq, seg[i] / nq});
    }
    report.classes = summarize(report.rows);
    return report;
}

void write_report_csv(const std::filesystem::path& path, const EvalReport& report) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << "episode_seed,class_id,alignment_dice,segmentation_dice\n";
    char buf[128];
    for (const auto& r : report.rows) {
        std::snprintf(buf, sizeof buf, "%llu,%d,%.17g,%.17g\n", static_cast<unsigned long long>(r.episode_seed),
                      r.class_id, r.alignment_dice, r.segmentation_dice);
        out << buf;
    }
}

EvalReport read_report_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read " + path.string());
    std::string line;
    std::getline(in, line);
    if (line != "episode_seed,class_id,alignment_dice,segmentation_dice")
        throw DataError(path.string() + ": not an evaluation report");
    EvalReport report;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        EvalRow r;
        unsigned long long seed = 0;
        if (std::sscanf(line.c_str(), "%llu,%d,%lf,%lf", &seed, &r.class_id, &r.alignment_dice,
                        &r.segmentation_dice) != 4)
            throw DataError(path.string() + ": malformed row \"" + line + "\"");
        r.episode_seed = seed;
        if (!(r.alignment_dice >= 0 && r.alignment_dice <= 1 && r.segmentation_dice >= 0 && r.segmentation_dice <= 1))
            throw DataError(path.string() + ": Dice outside [0, 1] in \"" + line + "\"");
        report.rows.push_back(r);
    }
    report.classes = summarize(report.rows);
    return report;
}

nlohmann::json summary_json(const EvalReport& report) {
    nlohmann::json classes = nlohmann::json::array();
    for (const auto& c : report.classes)
        classes.push_back({{"class_id", c.class_id},
                           {"episodes", c.episodes},
                           {"mean_dice", c.mean},
                           {"std_dice", c.stddev},
                           {"mean_alignment_dice", c.alignment_mean}});
    return {{"fingerprint", report.fingerprint},
            {"rows", report.rows.size()},
            {"mean_dice", report.mean_dice()},
            {"classes", classes}};
}

EvalReport merge_classes(const EvalReport& report, const std::vector<std::vector<int>>& groups) {
    std::map<int, int> target;
    for (const auto& g : groups) {
        if (g.empty()) throw ConfigError("empty class group");
        for (int id : g)
            if (!target.emplace(id, g.front()).second)
                throw ConfigError("class " + std::to_string(id) + " appears in more than one merge group");
    }
    EvalReport out;
    out.fingerprint = report.fingerprint;
    std::map<std::pair<std::uint64_t, int>, std::pair<std::size_t, std::size_t>> slot;  // -> (row index, count)
    for (const auto& r : report.rows) {
        const auto it = target.find(r.class_id);
        const int id = it == target.end() ? r.class_id : it->second;
        auto [pos, fresh] = slot.try_emplace({r.episode_seed, id}, out.rows.size(), 0);
        if (fresh) out.rows.push_back({r.episode_seed, id, 0.0, 0.0});
        EvalRow& m = out.rows[pos->second.first];
        m.alignment_dice += r.alignment_dice;
        m.segmentation_dice += r.segmentation_dice;
        ++pos->second.second;
    }
    for (const auto& [key, where] : slot) {
        out.rows[where.first].alignment_dice /= static_cast<double>(where.second);
        out.rows[where.first].segmentation_dice /= static_cast<double>(where.second);
    }
    out.classes = summarize(out.rows);
    return out;
}

std::vector<std::vector<int>> parse_class_groups(const std::string& text) {
    std::vector<std::vector<int>> groups;
    std::stringstream ss(text);
    for (std::string group; std::getline(ss, group, ',');) {
        std::vector<int> ids;
        std::stringstream gs(group);
        for (std::string item; std::getline(gs, item, '+');) {
            std::size_t used = 0;
            int id = 0;
            try {
                id = std::stoi(item, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used == 0 || used != item.size()) throw ConfigError("cannot parse class group \"" + group + "\"");
            ids.push_back(id);
        }
        if (ids.size() < 2) throw ConfigError("class group \"" + group + "\" needs at least two ids");
        groups.push_back(std::move(ids));
    }
    return groups;
}

std::string setting_label(const SweepSetting& s) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "alpha_%g_%s", s.alpha, s.overlap ? "overlap" : "no_overlap");
    return buf;
}

std::vector<SweepRow> sweep_alpha(const TrainConfig& base, const Dataset& dataset, const EvalConfig& eval,
                                  std::span<const SweepSetting> settings, const SweepOptions& options) {
    std::vector<SweepRow> rows;
    for (const auto& s : settings) {
        TrainConfig cfg = base;
        cfg.alpha = s.alpha;
        cfg.stride_fraction = s.overlap ? base.stride_fraction : 1.0;
        feature_grids(cfg, dataset.shape);  // reject bad geometry before any training

        Checkpoint ckpt;
        EvalConfig ec = eval;
        if (options.fixed_params) {
            ckpt.params = *options.fixed_params;
            ckpt.fingerprint = model_fingerprint(cfg, dataset.shape);
        } else {
            TrainOptions to;
            if (!options.out_dir.empty()) to.out_dir = options.out_dir / setting_label(s);
            if (options.on_step) to.on_step = [&](const LossRow& r) { options.on_step(s, r); };
            ckpt = train(cfg, dataset, to).checkpoint;
        }
        const EvalReport report = evaluate(ckpt, dataset, cfg, ec);
        rows.push_back({s, cfg.stride_fraction, report.mean_dice(), report.classes});
    }
    return rows;
}

void write_sweep_csv(const std::filesystem::path& path, std::span<const SweepRow> rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << "alpha,overlap,stride_fraction,mean_dice\n";
    char buf[128];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%.17g,%d,%.17g,%.17g\n", r.setting.alpha, r.setting.overlap ? 1 : 0,
                      r.stride_fraction, r.mean_dice);
        out << buf;
    }
}

std::vector<ScatterPoint> misalignment_points(const EvalReport& report) {
    std::vector<ScatterPoint> out;
    for (const auto& r : report.rows) out.push_back({r.class_id, r.alignment_dice, r.segmentation_dice});
    std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.class_id < b.class_id; });
    return out;
}

void write_scatter_csv(const std::filesystem::path& path, std::span<const ScatterPoint> points) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << "class_id,alignment_dice,segmentation_dice\n";
    char buf[96];
    for (const auto& p : points) {
        std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g\n", p.class_id, p.alignment_dice, p.segmentation_dice);
        out << buf;
    }
}

std::vector<ScatterPoint> read_scatter_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read " + path.string());
    std::string line;
    std::getline(in, line);
    if (line != "class_id,alignment_dice,segmentation_dice") throw DataError(path.string() + ": not a scatter table");
    std::vector<ScatterPoint> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        ScatterPoint p;
        if (std::sscanf(line.c_str(), "%d,%lf,%lf", &p.class_id, &p.alignment_dice, &p.segmentation_dice) != 3)
            throw DataError(path.string() + ": malformed row \"" + line + "\"");
        out.push_back(p);
    }
    return out;
}

}  // namespace lslp
