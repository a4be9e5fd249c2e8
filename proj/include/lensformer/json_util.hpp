#pragma once

#include <algorithm>
#include <initializer_list>
#include <string>

#include <json.hpp>

#include "lensformer/errors.hpp"

namespace lensformer {

using json = nlohmann::json;

namespace jsonutil {

/// Rejects keys outside `allowed`; `path` is the JSON pointer of `obj`.
inline void require_known_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& path) {
  if (!obj.is_object()) throw ConfigError("config error at " + (path.empty() ? std::string("/") : path) + ": expected an object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    const bool known = std::any_of(allowed.begin(), allowed.end(), [&](const char* k) { return it.key() == k; });
    if (!known) throw ConfigError("config error at " + path + "/" + it.key() + ": unknown key");
  }
}

/// Reads obj[key] into `out` when present, reporting type errors by path.
template <typename V>
void read(const json& obj, const char* key, V& out, const std::string& path) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    out = it->template get<V>();
  } catch (const json::exception& e) {
    throw ConfigError("config error at " + path + "/" + key + ": " + e.what());
  }
}

}  // namespace jsonutil
}  // namespace lensformer
