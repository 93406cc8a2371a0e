#pragma once

#include <functional>
#include <optional>
#include <string_view>

#include <nlohmann/json.hpp>

namespace turnwise {

// Scans `text` left to right for brace-balanced spans that parse as JSON
// objects and returns the first one `accept` agrees with. Braces inside
// string literals are ignored when balancing. Never throws on bad input.
std::optional<nlohmann::json> find_json_object(std::string_view text,
                                               const std::function<bool(const nlohmann::json&)>& accept = {});

}  // namespace turnwise
