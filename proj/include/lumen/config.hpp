#pragma once

#include <filesystem>
#include <cstdint>
#include <map>
#include <set>
#include <string>

namespace lumen {

/// Text configuration: `key = value` lines grouped under `[section]` headers,
/// `#` starts a comment. Keys are addressed as "section.key"; keys before the
/// first header live in section "run".
class Config {
 public:
  static Config parse(const std::string& text, const std::string& origin = "<string>");
  static Config load(const std::filesystem::path& path);

  /// Sets "section.key" from a "section.key=value" override.
  void set_override(const std::string& assignment);
  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const { return values_.count(key) != 0; }

  /// Typed getters; the default is recorded as the resolved value when the
  /// key is absent. Malformed values raise ConfigError naming the key.
  std::string get_string(const std::string& key, const std::string& fallback);
  double get_double(const std::string& key, double fallback);
  int get_int(const std::string& key, int fallback);
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback);
  bool get_bool(const std::string& key, bool fallback);

  /// Raises ConfigError for keys in `sections` that no getter asked for.
  void reject_unknown(const std::set<std::string>& sections) const;

  /// Every key that was read, with its resolved value, in section form.
  std::string resolved_text() const;

 private:
  std::map<std::string, std::string> values_;
  std::map<std::string, std::string> resolved_;
};

}  // namespace lumen
