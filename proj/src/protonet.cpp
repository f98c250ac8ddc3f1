#include "lslp/protonet.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <mutex>
#include "json.hpp"

#include "lslp/error.hpp"

namespace lslp {

namespace {

std::mutex g_audit_mutex;
ProbabilityAudit g_audit;

void record_audit(double deviation) {
    std::lock_guard lock(g_audit_mutex);
    ++g_audit.maps;
    g_audit.max_deviation = std::max(g_audit.max_deviation, deviation);
}

void require_mask_shape(const Tensor& mask, ImageShape shape) {
    if (mask.shape() != Shape{shape.height, shape.width})
        throw ShapeError("mask " + shape_string(mask.shape()) + " does not match image " +
                         std::to_string(shape.width) + "x" + std::to_string(shape.height));
}

}  // namespace

Prototype PrototypeSet::entry(std::size_t class_id, std::size_t grid_id) const {
    if (class_id > n_classes || grid_id >= grid_count()) throw ShapeError("prototype index out of range");
    const std::size_t d = depth();
    const std::size_t slot = class_id * grid_count() + grid_id;
    return Prototype{class_id, grid_id, std::span<const float>(vectors.raw() + slot * d, d), present[slot] != 0};
}

Tensor background_mask(std::span<const Tensor> foreground, ImageShape shape) {
    Tensor bg(Shape{shape.height, shape.width}, 1.0f);
    for (std::size_t c = 0; c < foreground.size(); ++c) {
        const Tensor& m = foreground[c];
        require_mask_shape(m, shape);
        for (std::size_t i = 0; i < m.size(); ++i) {
            if (m[i] != 0.0f && m[i] != 1.0f) throw DataError("foreground mask " + std::to_string(c) + " is not binary");
            if (m[i] == 1.0f) {
                if (bg[i] == 0.0f)
                    throw DataError("foreground masks overlap at pixel (" + std::to_string(i % shape.width) + ", " +
                                    std::to_string(i / shape.width) + ")");
                bg[i] = 0.0f;
            }
        }
    }
    return bg;
}

Tensor downsample_mask(const Tensor& mask, ImageShape feature) {
    if (mask.rank() != 2) throw ShapeError("downsample_mask expects an (H, W) mask, got " + shape_string(mask.shape()));
    const std::size_t h = mask.dim(0), w = mask.dim(1);
    if (feature.width == 0 || feature.height == 0 || w % feature.width != 0 || h % feature.height != 0)
        throw ShapeError("mask " + shape_string(mask.shape()) + " cannot be downsampled by an integral factor to " +
                         std::to_string(feature.width) + "x" + std::to_string(feature.height));
    const std::size_t fx = w / feature.width, fy = h / feature.height;
    Tensor out(Shape{feature.height, feature.width});
    const double inv = 1.0 / static_cast<double>(fx * fy);
    for (std::size_t y = 0; y < feature.height; ++y)
        for (std::size_t x = 0; x < feature.width; ++x) {
            double s = 0.0;
            for (std::size_t dy = 0; dy < fy; ++dy)
                for (std::size_t dx = 0; dx < fx; ++dx) s += mask.at(y * fy + dy, x * fx + dx);
            out.at(y, x) = static_cast<float>(s * inv);
        }
    return out;
}

Tensor class_weights(std::span<const Tensor> foreground, ImageShape image, ImageShape feature) {
    const std::size_t classes = foreground.size() + 1;
    Tensor out(Shape{classes, feature.height, feature.width});
    const std::size_t plane = feature.height * feature.width;
    auto put = [&](std::size_t c, const Tensor& m) {
        const Tensor d = downsample_mask(m, feature);
        std::copy(d.data().begin(), d.data().end(), out.raw() + c * plane);
    };
    put(0, background_mask(foreground, image));
    for (std::size_t c = 0; c < foreground.size(); ++c) put(c + 1, foreground[c]);
    return out;
}

Tensor soft_targets(std::span<const Tensor> foreground, ImageShape image, ImageShape feature) {
    Tensor t = class_weights(foreground, image, feature);
    const std::size_t classes = t.dim(0), plane = t.dim(1) * t.dim(2);
    for (std::size_t px = 0; px < plane; ++px) {
        double fg = 0.0;
        for (std::size_t c = 1; c < classes; ++c) fg += t[c * plane + px];
        t[px] = static_cast<float>(std::max(0.0, 1.0 - fg));
    }
    return t;
}

PrototypeSet extract_prototypes(std::span<const Tensor> features, std::span<const Tensor> weights,
                                std::shared_ptr<const GridSet> grids, ShotAveraging averaging) {
    if (!grids) throw Error("extract_prototypes needs a grid layout");
    std::vector<const Tensor*> f, w;
    for (const auto& t : features) f.push_back(&t);
    for (const auto& t : weights) w.push_back(&t);
    auto pooled = kernels::masked_pool_forward(f, w, *grids, averaging);
    PrototypeSet set;
    set.n_classes = pooled.vectors.dim(0) - 1;
    set.vectors = std::move(pooled.vectors);
    set.present = std::move(pooled.present);
    set.grids = std::move(grids);
    return set;
}

SimilarityMap similarity_map(const Tensor& query_features, const PrototypeSet& protos) {
    const Tensor windows = kernels::grid_cosine_forward(query_features, protos.vectors, *protos.grids);
    auto best = kernels::max_over_grids_forward(windows, protos.present, *protos.grids);
    SimilarityMap out{std::move(best.scores), std::vector<std::uint8_t>(best.winner.size())};
    for (std::size_t i = 0; i < best.winner.size(); ++i) out.absent[i] = best.winner[i] < 0 ? 1 : 0;
    return out;
}

ProbabilityMap probability_map(const SimilarityMap& scores, float temperature) {
    if (!(temperature > 0.0f)) throw ConfigError("softmax temperature must be positive");
    if (!scores.scores.all_finite()) throw NumericError("non-finite similarity scores");
    Tensor logits = scores.scores;
    for (auto& v : logits.data()) v *= temperature;
    ProbabilityMap out{kernels::softmax_channels(logits), scores.absent};

    const std::size_t classes = out.probs.dim(0), plane = out.probs.dim(1) * out.probs.dim(2);
    double deviation = 0.0;
    for (std::size_t px = 0; px < plane; ++px) {
        double s = 0.0;
        for (std::size_t c = 0; c < classes; ++c) s += out.probs[c * plane + px];
        deviation = std::max(deviation, std::abs(s - 1.0));
    }
    record_audit(deviation);
    return out;
}

Tensor argmax_labels(const ProbabilityMap& probs) {
    const std::size_t classes = probs.probs.dim(0), h = probs.probs.dim(1), w = probs.probs.dim(2);
    const std::size_t plane = h * w;
    const bool has_absent = probs.absent.size() == classes * plane;
    Tensor labels(Shape{h, w});
    for (std::size_t px = 0; px < plane; ++px) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < classes; ++c) {
            const float v = probs.probs[c * plane + px], b = probs.probs[best * plane + px];
            if (v > b) {
                best = c;
            } else if (v == b && has_absent && probs.absent[best * plane + px] && !probs.absent[c * plane + px]) {
                best = c;
            }
        }
        labels[px] = static_cast<float>(best);
    }
    return labels;
}

Tensor upsample_nearest(const Tensor& labels, ImageShape image) {
    const std::size_t h = labels.dim(0), w = labels.dim(1);
    if (image.width % w != 0 || image.height % h != 0)
        throw ShapeError("label map " + shape_string(labels.shape()) + " is not an integral downsample of the image");
    const std::size_t fx = image.width / w, fy = image.height / h;
    Tensor out(Shape{image.height, image.width});
    for (std::size_t y = 0; y < image.height; ++y)
        for (std::size_t x = 0; x < image.width; ++x) out.at(y, x) = labels.at(y / fy, x / fx);
    return out;
}

Tensor predict_labels(const ProbabilityMap& probs, ImageShape image) {
    return upsample_nearest(argmax_labels(probs), image);
}

NodeId build_local_scores(Graph& graph, std::span<const NodeId> support_features, std::vector<Tensor> weights,
                          NodeId query_features, std::shared_ptr<const GridSet> grids, ShotAveraging averaging) {
    std::vector<const Tensor*> w;
    for (const auto& t : weights) w.push_back(&t);
    auto present = kernels::prototype_presence(w, *grids);
    const NodeId protos = graph.masked_pool(std::vector<NodeId>(support_features.begin(), support_features.end()),
                                            std::move(weights), grids, averaging, "prototypes");
    const NodeId windows = graph.grid_cosine(query_features, protos, grids, "grid_cosine");
    return graph.max_over_grids(windows, std::move(present), std::move(grids), "grid_max");
}

void save_prototypes(const std::filesystem::path& stem, const PrototypeSet& protos) {
    auto tensor_path = stem;
    tensor_path += ".lslp";
    auto json_path = stem;
    json_path += ".json";
    save_tensor(tensor_path, protos.vectors);
    nlohmann::json j;
    j["n_classes"] = protos.n_classes;
    j["grid_count"] = protos.grid_count();
    j["depth"] = protos.depth();
    auto& entries = j["entries"] = nlohmann::json::array();
    for (std::size_t c = 0; c <= protos.n_classes; ++c)
        for (std::size_t m = 0; m < protos.grid_count(); ++m)
            entries.push_back({{"class_id", c}, {"grid_id", m}, {"present", protos.present[c * protos.grid_count() + m] != 0}});
    std::ofstream out(json_path);
    if (!out) throw DataError("cannot write " + json_path.string());
    out << j.dump(2) << '\n';
}

PrototypeSet load_prototypes(const std::filesystem::path& stem, std::shared_ptr<const GridSet> grids) {
    auto tensor_path = stem;
    tensor_path += ".lslp";
    auto json_path = stem;
    json_path += ".json";
    std::ifstream in(json_path);
    if (!in) throw DataError("cannot open " + json_path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(json_path.string() + ": " + e.what());
    }
    PrototypeSet set;
    set.vectors = load_tensor(tensor_path);
    set.n_classes = j.at("n_classes").get<std::size_t>();
    const auto n_g = j.at("grid_count").get<std::size_t>();
    if (set.vectors.rank() != 3 || set.vectors.dim(0) != set.n_classes + 1 || set.vectors.dim(1) != n_g ||
        set.vectors.dim(2) != j.at("depth").get<std::size_t>())
        throw DataError("prototype tensor " + shape_string(set.vectors.shape()) + " disagrees with " +
                        json_path.string());
    if (grids && grids->size() != n_g) throw DataError("prototype file grid count does not match layout");
    set.present.assign((set.n_classes + 1) * n_g, 0);
    for (const auto& e : j.at("entries")) {
        const auto c = e.at("class_id").get<std::size_t>(), m = e.at("grid_id").get<std::size_t>();
        if (c > set.n_classes || m >= n_g) throw DataError("prototype entry out of range in " + json_path.string());
        set.present[c * n_g + m] = e.at("present").get<bool>() ? 1 : 0;
    }
    set.grids = std::move(grids);
    return set;
}

ProbabilityAudit probability_audit() {
    std::lock_guard lock(g_audit_mutex);
    return g_audit;
}

}  // namespace lslp
