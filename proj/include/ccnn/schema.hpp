#pragma once

// A small JSON Schema subset validator: type, properties, required,
// additionalProperties, items, enum, minimum, exclusiveMinimum, maximum,
// minItems and local "$ref": "#/$defs/<name>" references.

#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace ccnn {

namespace detail {

inline bool schema_type_matches(const nlohmann::json& value, const std::string& type) {
    if (type == "object") return value.is_object();
    if (type == "array") return value.is_array();
    if (type == "string") return value.is_string();
    if (type == "boolean") return value.is_boolean();
    if (type == "integer") {
        return value.is_number_integer() || (value.is_number_float() && value.get<double>() == static_cast<double>(static_cast<long long>(value.get<double>())));
    }
    if (type == "number") return value.is_number();
    if (type == "null") return value.is_null();
    return false;
}

inline void validate_schema(const nlohmann::json& value, const nlohmann::json& schema, const nlohmann::json& root,
                            const std::string& where, std::vector<std::string>& errors) {
    if (schema.contains("$ref")) {
        const auto ref = schema["$ref"].get<std::string>();
        constexpr std::string_view prefix = "#/$defs/";
        if (!ref.starts_with(prefix) || !root.contains("$defs") || !root["$defs"].contains(ref.substr(prefix.size()))) {
            errors.push_back(where + ": unresolved schema reference " + ref);
            return;
        }
        validate_schema(value, root["$defs"][ref.substr(prefix.size())], root, where, errors);
        return;
    }
    if (schema.contains("type")) {
        const auto& t = schema["type"];
        bool ok = false;
        if (t.is_array()) {
            for (const auto& alt : t) ok = ok || schema_type_matches(value, alt.get<std::string>());
        } else {
            ok = schema_type_matches(value, t.get<std::string>());
        }
        if (!ok) {
            errors.push_back(where + ": expected " + t.dump());
            return;
        }
    }
    if (schema.contains("enum")) {
        bool found = false;
        for (const auto& e : schema["enum"]) found = found || e == value;
        if (!found) errors.push_back(where + ": value " + value.dump() + " not in " + schema["enum"].dump());
    }
    if (value.is_number()) {
        const double v = value.get<double>();
        if (schema.contains("minimum") && v < schema["minimum"].get<double>()) {
            errors.push_back(where + ": must be >= " + schema["minimum"].dump());
        }
        if (schema.contains("exclusiveMinimum") && v <= schema["exclusiveMinimum"].get<double>()) {
            errors.push_back(where + ": must be > " + schema["exclusiveMinimum"].dump());
        }
        if (schema.contains("maximum") && v > schema["maximum"].get<double>()) {
            errors.push_back(where + ": must be <= " + schema["maximum"].dump());
        }
    }
    if (value.is_object()) {
        const auto props = schema.value("properties", nlohmann::json::object());
        if (schema.contains("required")) {
            for (const auto& key : schema["required"]) {
                if (!value.contains(key.get<std::string>())) {
                    errors.push_back(where + ": missing required property '" + key.get<std::string>() + "'");
                }
            }
        }
        for (const auto& [key, child] : value.items()) {
            if (props.contains(key)) {
                validate_schema(child, props[key], root, where + "." + key, errors);
            } else if (schema.contains("additionalProperties")) {
                const auto& extra = schema["additionalProperties"];
                if (extra.is_boolean() && !extra.get<bool>()) {
                    errors.push_back(where + ": unknown property '" + key + "'");
                } else if (extra.is_object()) {
                    validate_schema(child, extra, root, where + "." + key, errors);
                }
            }
        }
    }
    if (value.is_array()) {
        if (schema.contains("minItems") && value.size() < schema["minItems"].get<std::size_t>()) {
            errors.push_back(where + ": needs at least " + schema["minItems"].dump() + " items");
        }
        if (schema.contains("items")) {
            for (std::size_t i = 0; i < value.size(); ++i) {
                validate_schema(value[i], schema["items"], root, where + "[" + std::to_string(i) + "]", errors);
            }
        }
    }
}

} // namespace detail

/// Returns one message per violation; empty when `value` conforms.
[[nodiscard]] inline std::vector<std::string> schema_errors(const nlohmann::json& value, const nlohmann::json& schema) {
    std::vector<std::string> errors;
    detail::validate_schema(value, schema, schema, "$", errors);
    return errors;
}

} // namespace ccnn
