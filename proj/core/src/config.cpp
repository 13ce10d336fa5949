#include "cpflow/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "cpflow/errors.hpp"

namespace cpflow {

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

Config Config::from_text(const std::string& text, const std::string& source) {
  Config cfg;
  size_t pos = 0;
  long line_no = 0;
  while (pos <= text.size()) {
    size_t nl = text.find('\n', pos);
    size_t end = nl == std::string::npos ? text.size() : nl;
    std::string line = text.substr(pos, end - pos);
    pos = nl == std::string::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ParseError(source + ": line " + std::to_string(line_no) +
                       ": expected 'key = value'");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw ParseError(source + ": line " + std::to_string(line_no) + ": empty key");
    }
    cfg.set(key, value);
  }
  return cfg;
}

Config Config::from_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ParseError(path + ": cannot open file");
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_text(buf.str(), path);
}

const std::string* Config::find(const std::string& key) const {
  for (const auto& kv : entries_) {
    if (kv.first == key) return &kv.second;
  }
  return nullptr;
}

bool Config::has(const std::string& key) const { return find(key) != nullptr; }

void Config::set(const std::string& key, const std::string& value) {
  for (auto& kv : entries_) {
    if (kv.first == key) {
      kv.second = value;
      return;
    }
  }
  entries_.emplace_back(key, value);
}

void Config::set_long(const std::string& key, long v) { set(key, std::to_string(v)); }
void Config::set_double(const std::string& key, double v) { set(key, format_double(v)); }
void Config::set_bool(const std::string& key, bool v) { set(key, v ? "true" : "false"); }
void Config::set_u64(const std::string& key, uint64_t v) { set(key, std::to_string(v)); }

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
  const std::string* v = find(key);
  return v ? *v : fallback;
}

std::string Config::get_string_required(const std::string& key) const {
  const std::string* v = find(key);
  if (!v) {
    throw ParseError("config: missing required key '" + key + "'");
  }
  return *v;
}

long Config::get_long(const std::string& key, long fallback) const {
  const std::string* v = find(key);
  if (!v) return fallback;
  const char* begin = v->c_str();
  char* end = nullptr;
  long out = std::strtol(begin, &end, 10);
  if (begin == end || *end != '\0') {
    throw ParseError("config: key '" + key + "' has non-integer value '" + *v + "'");
  }
  return out;
}

double Config::get_double(const std::string& key, double fallback) const {
  const std::string* v = find(key);
  if (!v) return fallback;
  const char* begin = v->c_str();
  char* end = nullptr;
  double out = std::strtod(begin, &end);
  if (begin == end || *end != '\0') {
    throw ParseError("config: key '" + key + "' has non-numeric value '" + *v + "'");
  }
  return out;
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  const std::string* v = find(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1") return true;
  if (*v == "false" || *v == "0") return false;
  throw ParseError("config: key '" + key + "' has non-boolean value '" + *v + "'");
}

uint64_t Config::get_u64(const std::string& key, uint64_t fallback) const {
  const std::string* v = find(key);
  if (!v) return fallback;
  const char* begin = v->c_str();
  char* end = nullptr;
  unsigned long long out = std::strtoull(begin, &end, 10);
  if (begin == end || *end != '\0') {
    throw ParseError("config: key '" + key + "' has non-integer value '" + *v + "'");
  }
  return static_cast<uint64_t>(out);
}

void Config::require_known(const std::vector<std::string>& allowed) const {
  for (const auto& kv : entries_) {
    bool known = false;
    for (const std::string& a : allowed) {
      if (kv.first == a) {
        known = true;
        break;
      }
    }
    if (!known) {
      throw ParseError("config: unknown key '" + kv.first + "'");
    }
  }
}

std::string Config::serialize() const {
  std::string out;
  for (const auto& kv : entries_) {
    out += kv.first;
    out += " = ";
    out += kv.second;
    out += '\n';
  }
  return out;
}

}  // namespace cpflow
