#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "amda/errors.hpp"

namespace amda {

/// 64-bit FNV-1a over raw bytes.
std::uint64_t fnv1a64(const std::string& bytes);

/// Lower-case 16-digit hex rendering of a 64-bit hash.
std::string hash_hex(std::uint64_t h);

/// Key/value configuration text: `key = value` lines grouped under
/// `[section]` or `[section.subsection]` headers, `#`/`;` comment lines,
/// UTF-8 throughout. Keys are addressed by their full dotted path. Parse
/// errors cite the offending line number.
class ConfigFile {
 public:
  ConfigFile() = default;

  static ConfigFile parse_file(const std::string& path);
  static ConfigFile parse_string(const std::string& text,
                                 const std::string& origin = "<string>");

  bool has(const std::string& key) const;

  std::string get_string(const std::string& key) const;
  std::string get_string(const std::string& key,
                         const std::string& fallback) const;
  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key) const;
  long long get_int(const std::string& key, long long fallback) const;
  bool get_bool(const std::string& key) const;
  bool get_bool(const std::string& key, bool fallback) const;

  void set(const std::string& key, const std::string& value);
  void set_double(const std::string& key, double value);
  void set_int(const std::string& key, long long value);
  void set_bool(const std::string& key, bool value);

  /// All dotted keys in sorted order.
  std::vector<std::string> keys() const;

  /// Canonical text form: sections and keys sorted, one value per line.
  /// Reparsing the result reproduces the same entries.
  std::string serialize() const;

  /// FNV-1a over the canonical serialization, so hashes ignore comments,
  /// ordering, and whitespace in the original file.
  std::uint64_t hash() const;

 private:
  std::map<std::string, std::string> entries_;
};

} // namespace amda
