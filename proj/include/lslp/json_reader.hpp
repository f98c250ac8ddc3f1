#pragma once

#include <set>
#include <string>

#include "json.hpp"
#include "lslp/error.hpp"

namespace lslp {

/// Pulls optional fields out of a JSON object and rejects any key that was
/// never asked for once finish() is called.
class JsonReader {
public:
    JsonReader(const nlohmann::json& j, std::string context) : j_(j), context_(std::move(context)) {
        if (!j_.is_object()) throw ConfigError(context_ + ": expected a JSON object");
    }

    template <class T>
    bool get(const std::string& key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return false;
        try {
            out = j_.at(key).get<T>();
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(context_ + "." + key + ": " + e.what());
        }
        return true;
    }

    const nlohmann::json* child(const std::string& key) {
        seen_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    std::string path(const std::string& key) const { return context_ + "." + key; }

    void finish() const {
        for (const auto& [key, value] : j_.items())
            if (!seen_.contains(key)) throw ConfigError(context_ + ": unknown key \"" + key + "\"");
    }

private:
    const nlohmann::json& j_;
    std::string context_;
    std::set<std::string> seen_;
};

}  // namespace lslp
