#pragma once

#include <set>
#include <string>

#include "json.hpp"
#include "sfdet/numerics/errors.hpp"

namespace sfdet::bench {

/// Reads optional keys from a JSON object and rejects any key it was not asked about.
class FieldReader {
 public:
  FieldReader(const nlohmann::json& j, std::string context) : j_(j), context_(std::move(context)) {
    if (!j_.is_object()) throw ConfigError(context_ + ": expected an object");
  }

  template <class T>
  void read(const std::string& key, T& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(context_ + "." + key + ": " + e.what());
    }
  }

  /// The nested object under `key`, or nullptr when absent.
  const nlohmann::json* sub(const std::string& key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (seen_.count(key) == 0) throw ConfigError(context_ + ": unknown key '" + key + "'");
  }

 private:
  const nlohmann::json& j_;
  std::string context_;
  std::set<std::string> seen_;
};

}  // namespace sfdet::bench
