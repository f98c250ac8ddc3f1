#include "lslp/config.hpp"

#include <fstream>

#include "lslp/error.hpp"
#include "lslp/json_reader.hpp"

namespace lslp {

nlohmann::json to_json(const RunConfig& c) {
    nlohmann::json j{{"schema_version", kRunConfigSchemaVersion},
                     {"phantom", to_json(c.phantom)},
                     {"train", to_json(c.train)},
                     {"eval", to_json(c.eval)},
                     {"output_dir", c.output_dir.string()}};
    if (c.dataset) j["dataset"] = c.dataset->string();
    if (c.working_size) j["working_size"] = {{"width", c.working_size->width}, {"height", c.working_size->height}};
    return j;
}

RunConfig run_config_from_json(const nlohmann::json& j) {
    RunConfig c;
    JsonReader r(j, "config");
    int version = kRunConfigSchemaVersion;
    r.get("schema_version", version);
    if (version != kRunConfigSchemaVersion)
        throw ConfigError("config schema_version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kRunConfigSchemaVersion) + ")");
    if (const auto* p = r.child("phantom")) c.phantom = phantom_spec_from_json(*p);
    if (const auto* t = r.child("train")) c.train = train_config_from_json(*t);
    if (const auto* e = r.child("eval")) c.eval = eval_config_from_json(*e);
    std::string path;
    if (r.get("dataset", path)) c.dataset = path;
    if (const auto* w = r.child("working_size")) {
        JsonReader wr(*w, r.path("working_size"));
        ImageShape s{};
        wr.get("width", s.width);
        wr.get("height", s.height);
        wr.finish();
        if (s.width == 0 || s.height == 0) throw ConfigError("config.working_size must be positive");
        c.working_size = s;
    }
    std::string out = c.output_dir.string();
    r.get("output_dir", out);
    c.output_dir = out;
    r.finish();
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return run_config_from_json(j);
}

void save_run_config(const std::filesystem::path& path, const RunConfig& config) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << to_json(config).dump(2) << '\n';
}

Dataset resolve_dataset(const RunConfig& config) {
    if (config.dataset) return load_dataset(*config.dataset, config.working_size);
    Dataset ds = generate_phantoms(config.phantom);
    if (config.working_size && !(config.working_size->width == ds.shape.width && config.working_size->height == ds.shape.height))
        throw ConfigError("working_size only applies to datasets loaded from disk; set phantom.image_size instead");
    return ds;
}

}  // namespace lslp
