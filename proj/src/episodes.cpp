#include "lslp/episodes.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "json.hpp"
#include "lslp/error.hpp"

namespace lslp {

std::vector<int> Dataset::class_ids() const {
    std::vector<int> ids;
    for (const auto& c : classes) ids.push_back(c.id);
    return ids;
}

const std::string& Dataset::class_name(int id) const {
    for (const auto& c : classes)
        if (c.id == id) return c.name;
    throw DataError("unknown class id " + std::to_string(id));
}

void validate_image(const LabeledImage& item, ImageShape shape) {
    if (item.image.shape() != Shape{1, shape.height, shape.width})
        throw DataError("image shape " + shape_string(item.image.shape()) + " does not match dataset size");
    for (float v : item.image.data())
        if (!(v >= 0.0f && v <= 1.0f)) throw DataError("image intensity outside [0, 1]");
    std::vector<std::uint8_t> owner(shape.width * shape.height, 0);
    for (const auto& [id, mask] : item.masks) {
        if (mask.shape() != Shape{shape.height, shape.width})
            throw DataError("mask for class " + std::to_string(id) + " has shape " + shape_string(mask.shape()));
        for (std::size_t i = 0; i < mask.size(); ++i) {
            if (mask[i] != 0.0f && mask[i] != 1.0f)
                throw DataError("mask for class " + std::to_string(id) + " is not binary");
            if (mask[i] == 1.0f && owner[i]++)
                throw DataError("class masks overlap at pixel " + std::to_string(i) + " (class " + std::to_string(id) +
                                ")");
        }
    }
}

Tensor resize_bilinear(const Tensor& image, ImageShape to) {
    const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
    Tensor out(Shape{c, to.height, to.width});
    const double sy = static_cast<double>(h) / static_cast<double>(to.height);
    const double sx = static_cast<double>(w) / static_cast<double>(to.width);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < to.height; ++y) {
            const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
            const auto y0 = static_cast<std::size_t>(fy);
            const std::size_t y1 = std::min(y0 + 1, h - 1);
            const double ty = fy - static_cast<double>(y0);
            for (std::size_t x = 0; x < to.width; ++x) {
                const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
                const auto x0 = static_cast<std::size_t>(fx);
                const std::size_t x1 = std::min(x0 + 1, w - 1);
                const double tx = fx - static_cast<double>(x0);
                const double top = image.at(ch, y0, x0) * (1 - tx) + image.at(ch, y0, x1) * tx;
                const double bottom = image.at(ch, y1, x0) * (1 - tx) + image.at(ch, y1, x1) * tx;
                out.at(ch, y, x) = static_cast<float>(top * (1 - ty) + bottom * ty);
            }
        }
    return out;
}

Tensor resize_nearest(const Tensor& mask, ImageShape to) {
    const std::size_t h = mask.dim(0), w = mask.dim(1);
    Tensor out(Shape{to.height, to.width});
    for (std::size_t y = 0; y < to.height; ++y)
        for (std::size_t x = 0; x < to.width; ++x)
            out.at(y, x) = mask.at(std::min(h - 1, y * h / to.height), std::min(w - 1, x * w / to.width));
    return out;
}

namespace {

std::string image_file(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "images/%05zu.lslp", i);
    return buf;
}

std::string mask_file(std::size_t i, int c) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "masks/%05zu_c%d.lslp", i, c);
    return buf;
}

}  // namespace

void save_dataset(const std::filesystem::path& dir, const Dataset& dataset) {
    std::filesystem::create_directories(dir / "images");
    std::filesystem::create_directories(dir / "masks");
    nlohmann::json j;
    j["schema_version"] = kDatasetSchemaVersion;
    j["image_size"] = {{"width", dataset.shape.width}, {"height", dataset.shape.height}};
    auto& classes = j["classes"] = nlohmann::json::array();
    for (const auto& c : dataset.classes) classes.push_back({{"id", c.id}, {"name", c.name}});
    auto& images = j["images"] = nlohmann::json::array();
    for (std::size_t i = 0; i < dataset.images.size(); ++i) {
        const auto& item = dataset.images[i];
        nlohmann::json entry;
        entry["image"] = image_file(i);
        if (!item.subset.empty()) entry["subset"] = item.subset;
        save_tensor(dir / image_file(i), item.image);
        entry["masks"] = nlohmann::json::object();
        entry["classes"] = nlohmann::json::array();
        for (const auto& [id, mask] : item.masks) {
            entry["masks"][std::to_string(id)] = mask_file(i, id);
            entry["classes"].push_back(id);
            save_tensor(dir / mask_file(i, id), mask);
        }
        images.push_back(std::move(entry));
    }
    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    if (!out) throw DataError("cannot write " + (dir / "manifest.json").string());
    out << j.dump(2) << '\n';
}

Dataset load_dataset(const std::filesystem::path& dir, std::optional<ImageShape> working) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw DataError("no manifest.json in " + dir.string());
    Dataset ds;
    try {
        nlohmann::json j;
        in >> j;
        if (j.at("schema_version").get<int>() != kDatasetSchemaVersion)
            throw DataError("unsupported dataset schema version in " + dir.string());
        ds.shape = {j.at("image_size").at("width").get<std::size_t>(), j.at("image_size").at("height").get<std::size_t>()};
        std::set<int> known;
        for (const auto& c : j.at("classes")) {
            ClassInfo info{c.at("id").get<int>(), c.at("name").get<std::string>()};
            if (!known.insert(info.id).second) throw DataError("duplicate class id " + std::to_string(info.id));
            ds.classes.push_back(std::move(info));
        }
        for (const auto& e : j.at("images")) {
            LabeledImage item;
            item.image = load_tensor(dir / e.at("image").get<std::string>());
            item.subset = e.value("subset", std::string{});
            if (!item.subset.empty() && item.subset != "train" && item.subset != "test")
                throw DataError("image subset must be \"train\" or \"test\", got \"" + item.subset + "\"");
            std::set<int> listed;
            for (const auto& c : e.at("classes")) listed.insert(c.get<int>());
            for (const auto& [key, file] : e.at("masks").items()) {
                const int id = std::stoi(key);
                if (!known.contains(id)) throw DataError("mask for undeclared class " + key);
                Tensor mask = load_tensor(dir / file.get<std::string>());
                if (std::none_of(mask.data().begin(), mask.data().end(), [](float v) { return v != 0.0f; }))
                    continue;
                item.masks.emplace(id, std::move(mask));
            }
            std::set<int> found;
            for (const auto& [id, m] : item.masks) found.insert(id);
            if (found != listed)
                throw DataError("image " + e.at("image").get<std::string>() +
                                ": present-class list does not match its non-empty masks");
            validate_image(item, ds.shape);
            ds.images.push_back(std::move(item));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed manifest in " + dir.string() + ": " + e.what());
    }

    if (working && *working != ds.shape) {
        for (auto& item : ds.images) {
            item.image = resize_bilinear(item.image, *working);
            for (auto it = item.masks.begin(); it != item.masks.end();) {
                it->second = resize_nearest(it->second, *working);
                const bool empty = std::none_of(it->second.data().begin(), it->second.data().end(),
                                                [](float v) { return v != 0.0f; });
                it = empty ? item.masks.erase(it) : std::next(it);
            }
        }
        ds.shape = *working;
    }
    return ds;
}

ClassSplit split_classes(std::span<const int> all_classes, std::span<const int> test_classes) {
    const std::set<int> all(all_classes.begin(), all_classes.end());
    const std::set<int> test(test_classes.begin(), test_classes.end());
    for (int c : test)
        if (!all.contains(c)) throw ConfigError("test class " + std::to_string(c) + " is not in the dataset");
    ClassSplit split;
    for (int c : all)
        (test.contains(c) ? split.test : split.train).push_back(c);
    if (split.train.empty()) throw ConfigError("class split leaves no training classes");
    if (split.test.empty()) throw ConfigError("class split leaves no test classes");
    return split;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    auto splitmix = [](std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    };
    std::uint64_t h = splitmix(base);
    h = splitmix(h ^ a);
    h = splitmix(h ^ b);
    return splitmix(h ^ c);
}

Episode sample_episode(const Dataset& dataset, const ClassSplit& split, SplitSide side, EpisodeShape shape,
                       std::uint64_t seed, std::span<const int> only) {
    if (shape.ways == 0 || shape.shots == 0 || shape.queries == 0)
        throw ConfigError("episodes need n, k and n_q of at least one");
    std::vector<int> candidates = side == SplitSide::Train ? split.train : split.test;
    if (!only.empty())
        std::erase_if(candidates, [&](int c) { return std::find(only.begin(), only.end(), c) == only.end(); });
    if (shape.ways > candidates.size())
        throw ConfigError(std::to_string(shape.ways) + "-way episode requested but only " +
                          std::to_string(candidates.size()) + " classes are available");

    std::mt19937_64 rng(seed);
    std::shuffle(candidates.begin(), candidates.end(), rng);
    Episode ep;
    ep.seed = seed;
    ep.classes.assign(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(shape.ways));

    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < dataset.images.size(); ++i)
        if (dataset.images[i].usable_for(side == SplitSide::Test) &&
            std::all_of(ep.classes.begin(), ep.classes.end(), [&](int c) { return dataset.images[i].contains(c); }))
            eligible.push_back(i);
    const std::size_t need = shape.shots + shape.queries;
    if (eligible.size() < need) {
        std::string names;
        for (int c : ep.classes) names += (names.empty() ? "" : ",") + std::to_string(c);
        throw DataError("episode for classes {" + names + "} needs " + std::to_string(need) + " images but only " +
                        std::to_string(eligible.size()) + " contain them (deficit " +
                        std::to_string(need - eligible.size()) + ")");
    }
    std::shuffle(eligible.begin(), eligible.end(), rng);

    auto take = [&](std::size_t idx) {
        const auto& src = dataset.images[idx];
        EpisodeImage e{idx, src.image, {}};
        for (int c : ep.classes) e.masks.push_back(src.masks.at(c));
        return e;
    };
    for (std::size_t i = 0; i < shape.shots; ++i) ep.support.push_back(take(eligible[i]));
    for (std::size_t i = 0; i < shape.queries; ++i) ep.query.push_back(take(eligible[shape.shots + i]));
    return ep;
}

Tensor apply_photometric(const Tensor& image, double gamma, double contrast, double brightness) {
    Tensor out = image;
    for (auto& v : out.data()) {
        double x = v;
        if (gamma != 1.0) x = std::pow(x, gamma);
        if (contrast != 1.0) x = std::clamp(0.5 + contrast * (x - 0.5), 0.0, 1.0);
        if (brightness != 0.0) x = std::clamp(x + brightness, 0.0, 1.0);
        v = static_cast<float>(x);
    }
    return out;
}

Tensor augment(const Tensor& image, std::mt19937_64& rng, const AugmentParams& params) {
    if (!params.enabled) return image;
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    double gamma = 1.0, contrast = 1.0, brightness = 0.0;
    if (coin(rng) < params.probability) gamma = std::uniform_real_distribution<double>(params.gamma_min, params.gamma_max)(rng);
    if (coin(rng) < params.probability)
        contrast = std::uniform_real_distribution<double>(params.contrast_min, params.contrast_max)(rng);
    if (coin(rng) < params.probability)
        brightness = std::uniform_real_distribution<double>(params.brightness_min, params.brightness_max)(rng);
    return apply_photometric(image, gamma, contrast, brightness);
}

}  // namespace lslp
