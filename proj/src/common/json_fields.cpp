#include "fust/common/json_fields.hpp"

#include <algorithm>

namespace fust {

void require_known_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed,
                        const std::string& path) {
    if (!j.is_object()) throw ConfigError(path.empty() ? "<root>" : path, "expected an object");
    for (const auto& [key, value] : j.items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
            throw ConfigError(path.empty() ? key : path + "." + key, "unknown key");
        }
    }
}

} // namespace fust
