#pragma once

#include <initializer_list>
#include <limits>
#include <set>
#include <string>

#include "qnet/cli/config.hpp"
#include "qnet/errors.hpp"

namespace qnet::cli {

inline std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

/// Strict view of one JSON object: rejects keys outside `allowed`.
class Obj {
 public:
  Obj(const ordered_json& j, std::string path, std::initializer_list<const char*> allowed)
      : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError(path_, "expected an object");
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (!ok.count(it.key())) throw ConfigError(at(it.key()), "unknown key '" + it.key() + "'");
    }
  }

  bool has(const std::string& key) const { return j_.contains(key); }
  std::string at(const std::string& key) const { return join(path_, key); }
  const ordered_json& raw(const std::string& key) const { return j_.at(key); }

  void num(const std::string& key, double& out) const {
    if (!has(key)) return;
    const auto& v = j_.at(key);
    if (v.is_number()) {
      out = v.get<double>();
    } else if (v.is_string() && (v == "inf" || v == "-inf")) {
      out = v == "inf" ? std::numeric_limits<double>::infinity()
                       : -std::numeric_limits<double>::infinity();
    } else {
      throw ConfigError(at(key), "expected a number");
    }
  }
  template <class U>
  void uint(const std::string& key, U& out) const {
    if (!has(key)) return;
    const auto& v = j_.at(key);
    const bool ok = v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
    if (!ok) throw ConfigError(at(key), "expected a non-negative integer");
    const auto x = v.get<std::uint64_t>();
    if (x > std::numeric_limits<U>::max()) throw ConfigError(at(key), "value too large");
    out = static_cast<U>(x);
  }
  void boolean(const std::string& key, bool& out) const {
    if (!has(key)) return;
    if (!j_.at(key).is_boolean()) throw ConfigError(at(key), "expected true or false");
    out = j_.at(key).get<bool>();
  }
  void str(const std::string& key, std::string& out) const {
    if (!has(key)) return;
    if (!j_.at(key).is_string()) throw ConfigError(at(key), "expected a string");
    out = j_.at(key).get<std::string>();
  }

 private:
  const ordered_json& j_;
  std::string path_;
};

template <class F>
void checked(const std::string& path, F&& f) {
  try {
    f();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(path, e.what());
  }
}

}  // namespace qnet::cli
