#include "lumen/config.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include "lumen/errors.hpp"

namespace lumen {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool valid_name(const std::string& s) {
  if (s.empty()) return false;
  for (char c : s) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-')) return false;
  }
  return true;
}

std::string section_of(const std::string& key) { return key.substr(0, key.find('.')); }

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ConfigError("config: '" + key + "' = '" + text + "' is not a valid number");
  return v;
}

}  // namespace

Config Config::parse(const std::string& text, const std::string& origin) {
  Config cfg;
  std::istringstream in(text);
  std::string line, section = "run";
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(number);
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (!valid_name(section)) throw ConfigError(where + ": bad section name '" + section + "'");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    for (std::size_t start = 0;;) {
      const auto dot = key.find('.', start);
      if (!valid_name(key.substr(start, dot == std::string::npos ? std::string::npos : dot - start))) {
        throw ConfigError(where + ": bad key '" + key + "'");
      }
      if (dot == std::string::npos) break;
      start = dot + 1;
    }
    const std::string full = section + "." + key;
    if (cfg.values_.count(full)) throw ConfigError(where + ": duplicate key '" + full + "'");
    cfg.values_[full] = value;
  }
  return cfg;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

void Config::set_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' must look like section.key=value");
  const std::string key = trim(assignment.substr(0, eq));
  if (key.find('.') == std::string::npos) throw ConfigError("override key '" + key + "' needs a section");
  set(key, trim(assignment.substr(eq + 1)));
}

void Config::set(const std::string& key, const std::string& value) { values_[key] = value; }

std::string Config::get_string(const std::string& key, const std::string& fallback) {
  const auto it = values_.find(key);
  const std::string v = it == values_.end() ? fallback : it->second;
  resolved_[key] = v;
  return v;
}

double Config::get_double(const std::string& key, double fallback) {
  const auto it = values_.find(key);
  const double v = it == values_.end() ? fallback : parse_number<double>(key, it->second);
  std::ostringstream os;
  os.precision(17);
  os << v;
  resolved_[key] = os.str();
  return v;
}

int Config::get_int(const std::string& key, int fallback) {
  const auto it = values_.find(key);
  const int v = it == values_.end() ? fallback : parse_number<int>(key, it->second);
  resolved_[key] = std::to_string(v);
  return v;
}

std::uint64_t Config::get_u64(const std::string& key, std::uint64_t fallback) {
  const auto it = values_.find(key);
  const std::uint64_t v = it == values_.end() ? fallback : parse_number<std::uint64_t>(key, it->second);
  resolved_[key] = std::to_string(v);
  return v;
}

bool Config::get_bool(const std::string& key, bool fallback) {
  const auto it = values_.find(key);
  bool v = fallback;
  if (it != values_.end()) {
    const std::string& s = it->second;
    if (s == "true" || s == "1" || s == "yes" || s == "on") {
      v = true;
    } else if (s == "false" || s == "0" || s == "no" || s == "off") {
      v = false;
    } else {
      throw ConfigError("config: '" + key + "' = '" + s + "' is not a boolean");
    }
  }
  resolved_[key] = v ? "true" : "false";
  return v;
}

void Config::reject_unknown(const std::set<std::string>& sections) const {
  for (const auto& [key, value] : values_) {
    if (sections.count(section_of(key)) && !resolved_.count(key)) {
      throw ConfigError("config: unknown key '" + key + "'");
    }
  }
}

std::string Config::resolved_text() const {
  std::ostringstream out;
  std::string current;
  for (const auto& [key, value] : resolved_) {
    const std::string section = section_of(key);
    if (section != current) {
      out << (current.empty() ? "" : "\n") << "[" << section << "]\n";
      current = section;
    }
    out << key.substr(section.size() + 1) << " = " << value << "\n";
  }
  return out.str();
}

}  // namespace lumen
