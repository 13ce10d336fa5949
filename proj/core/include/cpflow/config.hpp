#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cpflow {

// Flat `key = value` configuration with `#` comments. Keys keep first-seen
// order; setting an existing key overwrites its value in place, which gives
// "later wins" semantics for file-then-flags layering. Typed getters raise
// ParseError naming the key when a value does not convert.
class Config {
 public:
  static Config from_text(const std::string& text, const std::string& source);
  static Config from_file(const std::string& path);

  bool has(const std::string& key) const;
  void set(const std::string& key, const std::string& value);
  void set_long(const std::string& key, long v);
  void set_double(const std::string& key, double v);
  void set_bool(const std::string& key, bool v);

  std::string get_string(const std::string& key, const std::string& fallback) const;
  std::string get_string_required(const std::string& key) const;
  long get_long(const std::string& key, long fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  uint64_t get_u64(const std::string& key, uint64_t fallback) const;
  void set_u64(const std::string& key, uint64_t v);

  // Raises ParseError naming the first key not in `allowed`.
  void require_known(const std::vector<std::string>& allowed) const;

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

  // `key = value` lines in entry order; parsing the result reproduces the map.
  std::string serialize() const;

 private:
  const std::string* find(const std::string& key) const;
  std::vector<std::pair<std::string, std::string>> entries_;
};

// %.17g, so a parse of the printed text recovers the double bit for bit.
std::string format_double(double v);

}  // namespace cpflow
