#pragma once

// Keyed JSON access that reports the offending key on failure.

#include <initializer_list>
#include <string>

#include "clopa/errors.hpp"
#include "json.hpp"

namespace clopa::detail {

using nlohmann::json;

inline json parse_json(const std::string& text, const std::string& context) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(context + ": malformed JSON: " + e.what());
  }
}

inline void require_object(const json& j, const std::string& context) {
  if (!j.is_object()) throw ConfigError(context + ": expected a JSON object");
}

inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& context) {
  require_object(j, context);
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(context + ": unknown key '" + key + "'");
  }
}

template <class T>
T field(const json& j, const char* key, const std::string& context) {
  if (!j.contains(key)) throw ConfigError(context + ": missing key '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(context + ": key '" + key + "': " + e.what());
  }
}

template <class T>
T field_or(const json& j, const char* key, T fallback, const std::string& context) {
  return j.contains(key) ? field<T>(j, key, context) : fallback;
}

}  // namespace clopa::detail
