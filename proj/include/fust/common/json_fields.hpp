#pragma once

#include <initializer_list>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "fust/numerics/errors.hpp"

namespace fust {

// Error raised while reading a config section; `path` is dotted, e.g. "plan.strategy".
class ConfigError : public ContractError {
public:
    ConfigError(const std::string& path, const std::string& what)
        : ContractError(path + ": " + what), path_(path) {}
    const std::string& path() const { return path_; }

private:
    std::string path_;
};

// Reject any key of `j` not in `allowed`.
void require_known_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed,
                        const std::string& path);

// Read j[key] into out when present; type errors carry the field path.
template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& out, const std::string& path) {
    auto it = j.find(key);
    if (it == j.end()) return;
    try {
        out = it->template get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path.empty() ? key : path + "." + key, e.what());
    }
}

} // namespace fust
