#include "amda/configfile.hpp"

#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace amda {

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

bool valid_path_chars(const std::string& s) {
  if (s.empty()) return false;
  for (char c : s) {
    const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '_' ||
                    c == '-' || c == '.';
    if (!ok) return false;
  }
  return s.front() != '.' && s.back() != '.';
}

[[noreturn]] void fail(const std::string& origin, std::size_t line,
                       const std::string& what) {
  throw ConfigError(origin + ":" + std::to_string(line) + ": " + what);
}

} // namespace

ConfigFile ConfigFile::parse_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open config file: " + path);
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_string(buf.str(), path);
}

ConfigFile ConfigFile::parse_string(const std::string& text,
                                    const std::string& origin) {
  ConfigFile cfg;
  std::istringstream in(text);
  std::string raw, section;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    const std::string line = trim(raw);
    if (line.empty() || line.front() == '#' || line.front() == ';') continue;

    if (line.front() == '[') {
      if (line.back() != ']') {
        fail(origin, line_no, "unterminated section header '" + line + "'");
      }
      const std::string name = trim(line.substr(1, line.size() - 2));
      if (!valid_path_chars(name)) {
        fail(origin, line_no, "invalid section name '" + name + "'");
      }
      section = name;
      continue;
    }

    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      fail(origin, line_no, "expected 'key = value', got '" + line + "'");
    }
    const std::string key = trim(line.substr(0, eq));
    if (!valid_path_chars(key)) {
      fail(origin, line_no, "invalid key '" + key + "'");
    }
    const std::string value = trim(line.substr(eq + 1));
    const std::string path = section.empty() ? key : section + "." + key;
    if (cfg.entries_.count(path)) {
      fail(origin, line_no, "duplicate key '" + path + "'");
    }
    cfg.entries_[path] = value;
  }
  return cfg;
}

bool ConfigFile::has(const std::string& key) const {
  return entries_.count(key) != 0;
}

std::string ConfigFile::get_string(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) {
    throw ConfigError("missing config key '" + key + "'");
  }
  return it->second;
}

std::string ConfigFile::get_string(const std::string& key,
                                   const std::string& fallback) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? fallback : it->second;
}

double ConfigFile::get_double(const std::string& key) const {
  const std::string raw = get_string(key);
  char* end = nullptr;
  const double v = std::strtod(raw.c_str(), &end);
  if (raw.empty() || end != raw.c_str() + raw.size()) {
    throw ConfigError("config key '" + key + "': '" + raw +
                      "' is not a number");
  }
  return v;
}

double ConfigFile::get_double(const std::string& key, double fallback) const {
  return has(key) ? get_double(key) : fallback;
}

long long ConfigFile::get_int(const std::string& key) const {
  const std::string raw = get_string(key);
  char* end = nullptr;
  const long long v = std::strtoll(raw.c_str(), &end, 10);
  if (raw.empty() || end != raw.c_str() + raw.size()) {
    throw ConfigError("config key '" + key + "': '" + raw +
                      "' is not an integer");
  }
  return v;
}

long long ConfigFile::get_int(const std::string& key,
                              long long fallback) const {
  return has(key) ? get_int(key) : fallback;
}

bool ConfigFile::get_bool(const std::string& key) const {
  std::string raw = get_string(key);
  for (char& c : raw) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (raw == "true" || raw == "1" || raw == "yes" || raw == "on") return true;
  if (raw == "false" || raw == "0" || raw == "no" || raw == "off") return false;
  throw ConfigError("config key '" + key + "': '" + raw + "' is not a boolean");
}

bool ConfigFile::get_bool(const std::string& key, bool fallback) const {
  return has(key) ? get_bool(key) : fallback;
}

void ConfigFile::set(const std::string& key, const std::string& value) {
  if (!valid_path_chars(key)) {
    throw ConfigError("invalid config key '" + key + "'");
  }
  entries_[key] = value;
}

void ConfigFile::set_double(const std::string& key, double value) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  set(key, buf);
}

void ConfigFile::set_int(const std::string& key, long long value) {
  set(key, std::to_string(value));
}

void ConfigFile::set_bool(const std::string& key, bool value) {
  set(key, value ? "true" : "false");
}

std::vector<std::string> ConfigFile::keys() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [k, v] : entries_) out.push_back(k);
  return out;
}

std::string ConfigFile::serialize() const {
  // Top-level keys first (they cannot follow a section header), then keys
  // grouped under their section, everything in sorted order.
  std::ostringstream out;
  bool wrote_any = false;
  for (const auto& [path, value] : entries_) {
    if (path.find('.') == std::string::npos) {
      out << path << " = " << value << "\n";
      wrote_any = true;
    }
  }
  std::string current_section;
  bool in_section = false;
  for (const auto& [path, value] : entries_) {
    const std::size_t dot = path.rfind('.');
    if (dot == std::string::npos) continue;
    const std::string section = path.substr(0, dot);
    if (!in_section || section != current_section) {
      if (wrote_any) out << "\n";
      out << "[" << section << "]\n";
      current_section = section;
      in_section = true;
      wrote_any = true;
    }
    out << path.substr(dot + 1) << " = " << value << "\n";
  }
  return out.str();
}

std::uint64_t ConfigFile::hash() const { return fnv1a64(serialize()); }

} // namespace amda
