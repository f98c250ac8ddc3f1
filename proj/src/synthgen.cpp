#include "lslp/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "lslp/error.hpp"
#include "lslp/json_reader.hpp"
#include "lslp/metrics.hpp"

namespace lslp {

PhantomSpec default_phantom_spec(std::size_t n_classes) {
    // Left/right pairs mirror each other about the vertical midline.
    static const std::vector<PhantomClass> layout{
        {"liver", 0.30, 0.36, 0.16, 0.55, 0.10},
        {"spleen", 0.73, 0.33, 0.11, 0.45, 0.10},
        {"right_psoas", 0.40, 0.82, 0.07, 0.52, 0.10},
        {"left_psoas", 0.60, 0.82, 0.07, 0.48, 0.10},
        {"right_kidney", 0.32, 0.62, 0.085, 0.58, 0.10},
        {"left_kidney", 0.68, 0.62, 0.085, 0.42, 0.10},
    };
    if (n_classes > layout.size())
        throw ConfigError("the built-in layout has " + std::to_string(layout.size()) +
                          " classes; list more explicitly under \"classes\"");
    PhantomSpec spec;
    spec.classes.assign(layout.begin(), layout.begin() + static_cast<std::ptrdiff_t>(n_classes));
    return spec;
}

nlohmann::json to_json(const PhantomSpec& spec) {
    nlohmann::json classes = nlohmann::json::array();
    for (const auto& c : spec.classes)
        classes.push_back({{"name", c.name},
                           {"center", {c.center_x, c.center_y}},
                           {"radius", c.radius},
                           {"intensity_mean", c.intensity_mean},
                           {"intensity_std", c.intensity_std}});
    return {{"image_size", {{"width", spec.image_size.width}, {"height", spec.image_size.height}}},
            {"classes", classes},
            {"position_jitter", spec.position_jitter},
            {"radius_jitter", spec.radius_jitter},
            {"eccentricity", {spec.eccentricity_min, spec.eccentricity_max}},
            {"background_mean", spec.background_mean},
            {"background_amplitude", spec.background_amplitude},
            {"background_cells", spec.background_cells},
            {"n_images", spec.n_images},
            {"n_test_images", spec.n_test_images},
            {"seed", spec.seed},
            {"max_retries", spec.max_retries}};
}

PhantomSpec phantom_spec_from_json(const nlohmann::json& j) {
    JsonReader r(j, "phantom");
    std::size_t n_classes = 6;
    r.get("n_classes", n_classes);
    PhantomSpec spec = default_phantom_spec(j.contains("classes") ? 0 : n_classes);
    if (const auto* size = r.child("image_size")) {
        JsonReader s(*size, r.path("image_size"));
        s.get("width", spec.image_size.width);
        s.get("height", spec.image_size.height);
        s.finish();
    }
    if (const auto* classes = r.child("classes")) {
        if (!classes->is_array()) throw ConfigError("phantom.classes must be an array");
        for (const auto& c : *classes) {
            JsonReader cr(c, r.path("classes[]"));
            PhantomClass pc;
            cr.get("name", pc.name);
            std::vector<double> center{pc.center_x, pc.center_y};
            cr.get("center", center);
            if (center.size() != 2) throw ConfigError("phantom class center must have two entries");
            pc.center_x = center[0];
            pc.center_y = center[1];
            cr.get("radius", pc.radius);
            cr.get("intensity_mean", pc.intensity_mean);
            cr.get("intensity_std", pc.intensity_std);
            cr.finish();
            spec.classes.push_back(pc);
        }
        if (j.contains("n_classes") && n_classes != spec.classes.size())
            throw ConfigError("phantom.n_classes disagrees with the number of listed classes");
    }
    r.get("position_jitter", spec.position_jitter);
    r.get("radius_jitter", spec.radius_jitter);
    std::vector<double> ecc{spec.eccentricity_min, spec.eccentricity_max};
    if (r.get("eccentricity", ecc)) {
        if (ecc.size() != 2) throw ConfigError("phantom.eccentricity must be [min, max]");
        spec.eccentricity_min = ecc[0];
        spec.eccentricity_max = ecc[1];
    }
    r.get("background_mean", spec.background_mean);
    r.get("background_amplitude", spec.background_amplitude);
    r.get("background_cells", spec.background_cells);
    r.get("n_images", spec.n_images);
    r.get("n_test_images", spec.n_test_images);
    r.get("seed", spec.seed);
    r.get("max_retries", spec.max_retries);
    r.finish();
    return spec;
}

namespace {

void validate(const PhantomSpec& spec) {
    if (spec.image_size.width == 0 || spec.image_size.height == 0) throw ConfigError("phantom image size must be positive");
    if (spec.n_test_images > spec.n_images) throw ConfigError("phantom.n_test_images exceeds n_images");
    if (spec.position_jitter < 0 || spec.radius_jitter < 0) throw ConfigError("phantom jitter must be non-negative");
    if (!(spec.eccentricity_min > 0 && spec.eccentricity_min <= spec.eccentricity_max && spec.eccentricity_max <= 1))
        throw ConfigError("phantom eccentricity range must satisfy 0 < min <= max <= 1");
    if (spec.background_cells == 0) throw ConfigError("phantom.background_cells must be positive");
    for (const auto& c : spec.classes) {
        if (!(c.radius > 0)) throw ConfigError("phantom class " + c.name + " needs a positive radius");
        if (c.intensity_std < 0) throw ConfigError("phantom class " + c.name + " has negative intensity spread");
    }
}

Tensor smooth_field(const PhantomSpec& spec, std::mt19937_64& rng) {
    const std::size_t w = spec.image_size.width, h = spec.image_size.height, n = spec.background_cells + 1;
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> ctrl(n * n);
    for (auto& v : ctrl) v = u(rng);
    Tensor out(Shape{h, w});
    for (std::size_t y = 0; y < h; ++y) {
        const double fy = (static_cast<double>(y) + 0.5) / static_cast<double>(h) * static_cast<double>(n - 1);
        const auto y0 = std::min(static_cast<std::size_t>(fy), n - 2 + (n == 1));
        const double ty = fy - static_cast<double>(y0);
        for (std::size_t x = 0; x < w; ++x) {
            const double fx = (static_cast<double>(x) + 0.5) / static_cast<double>(w) * static_cast<double>(n - 1);
            const auto x0 = std::min(static_cast<std::size_t>(fx), n - 2 + (n == 1));
            const double tx = fx - static_cast<double>(x0);
            auto at = [&](std::size_t yy, std::size_t xx) { return ctrl[std::min(yy, n - 1) * n + std::min(xx, n - 1)]; };
            // Smoothstep weights keep the field free of visible kinks at control cells.
            const double sx = tx * tx * (3 - 2 * tx), sy = ty * ty * (3 - 2 * ty);
            const double top = at(y0, x0) * (1 - sx) + at(y0, x0 + 1) * sx;
            const double bottom = at(y0 + 1, x0) * (1 - sx) + at(y0 + 1, x0 + 1) * sx;
            out.at(y, x) = static_cast<float>(top * (1 - sy) + bottom * sy);
        }
    }
    return out;
}

LabeledImage render_image(const PhantomSpec& spec, std::size_t index) {
    std::mt19937_64 rng(derive_seed(spec.seed, index));
    const std::size_t w = spec.image_size.width, h = spec.image_size.height;
    const double wd = static_cast<double>(w), hd = static_cast<double>(h);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    const Tensor field = smooth_field(spec, rng);
    LabeledImage item;
    item.image = Tensor(Shape{1, h, w});
    for (std::size_t i = 0; i < w * h; ++i)
        item.image[i] = static_cast<float>(std::clamp(spec.background_mean + spec.background_amplitude * field[i], 0.0, 1.0));

    std::vector<int> owner(w * h, -1);
    for (std::size_t c = 0; c < spec.classes.size(); ++c) {
        const PhantomClass& pc = spec.classes[c];
        std::vector<std::size_t> pixels;
        int blocker = -1;
        bool placed = false;
        for (std::size_t attempt = 0; attempt <= spec.max_retries && !placed; ++attempt) {
            const double cx = (pc.center_x + spec.position_jitter * normal(rng)) * wd;
            const double cy = (pc.center_y + spec.position_jitter * normal(rng)) * hd;
            const double major = pc.radius * wd * std::max(0.2, 1.0 + spec.radius_jitter * normal(rng));
            const double ecc = spec.eccentricity_min + (spec.eccentricity_max - spec.eccentricity_min) * unit(rng);
            const double minor = major * ecc;
            const double theta = std::numbers::pi * unit(rng);
            if (cx - major < 0 || cx + major > wd || cy - major < 0 || cy + major > hd) continue;

            const double ct = std::cos(theta), st = std::sin(theta);
            pixels.clear();
            blocker = -1;
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x) {
                    const double dx = static_cast<double>(x) + 0.5 - cx, dy = static_cast<double>(y) + 0.5 - cy;
                    const double u = (dx * ct + dy * st) / major, v = (-dx * st + dy * ct) / minor;
                    if (u * u + v * v > 1.0) continue;
                    if (owner[y * w + x] >= 0) blocker = owner[y * w + x];
                    pixels.push_back(y * w + x);
                }
            placed = blocker < 0 && !pixels.empty();
        }
        if (!placed) {
            if (blocker >= 0)
                throw DataError("phantom image " + std::to_string(index) + ": class " + pc.name +
                                " keeps colliding with class " + spec.classes[static_cast<std::size_t>(blocker)].name +
                                " after " + std::to_string(spec.max_retries) + " retries");
            throw DataError("phantom image " + std::to_string(index) + ": class " + pc.name +
                            " does not fit inside the image after " + std::to_string(spec.max_retries) + " retries");
        }
        Tensor mask(Shape{h, w});
        for (auto p : pixels) {
            owner[p] = static_cast<int>(c);
            mask[p] = 1.0f;
            item.image[p] = static_cast<float>(std::clamp(pc.intensity_mean + pc.intensity_std * normal(rng), 0.0, 1.0));
        }
        item.masks.emplace(static_cast<int>(c), std::move(mask));
    }
    item.subset = index + spec.n_test_images >= spec.n_images ? "test" : "train";
    return item;
}

}  // namespace

Dataset generate_phantoms(const PhantomSpec& spec) {
    validate(spec);
    Dataset ds;
    ds.shape = spec.image_size;
    for (std::size_t c = 0; c < spec.classes.size(); ++c) ds.classes.push_back({static_cast<int>(c), spec.classes[c].name});
    ds.images.resize(spec.n_images);
    for (std::size_t i = 0; i < spec.n_images; ++i) ds.images[i] = render_image(spec, i);
    return ds;
}

void generate_dataset(const PhantomSpec& spec, const std::filesystem::path& dir) {
    const Dataset ds = generate_phantoms(spec);
    namespace fs = std::filesystem;
    const fs::path target = fs::absolute(dir).lexically_normal();
    fs::path staging = target;
    staging += ".partial";
    fs::remove_all(staging);
    try {
        save_dataset(staging, ds);
        fs::remove_all(target);
        if (target.has_parent_path()) fs::create_directories(target.parent_path());
        fs::rename(staging, target);
    } catch (...) {
        fs::remove_all(staging);
        throw;
    }
}

std::vector<AlignmentStats> layout_report(const Dataset& dataset) {
    std::vector<AlignmentStats> out;
    for (int id : dataset.class_ids()) {
        AlignmentStats s;
        s.class_id = id;
        std::vector<const Tensor*> masks;
        for (const auto& item : dataset.images)
            if (auto it = item.masks.find(id); it != item.masks.end()) masks.push_back(&it->second);
        std::vector<double> values;
        for (std::size_t i = 0; i < masks.size(); ++i)
            for (std::size_t j = i + 1; j < masks.size(); ++j) values.push_back(dice(*masks[i], *masks[j]));
        s.pairs = values.size();
        if (!values.empty()) {
            std::sort(values.begin(), values.end());
            s.min = values.front();
            s.max = values.back();
            const std::size_t n = values.size();
            s.median = n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
            double sum = 0.0;
            for (double v : values) sum += v;
            s.mean = sum / static_cast<double>(n);
        }
        out.push_back(s);
    }
    return out;
}

}  // namespace lslp
