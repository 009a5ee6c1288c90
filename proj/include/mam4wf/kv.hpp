#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mam4wf/errors.hpp"

namespace mam4wf {

// Line-oriented nested key/value text. One `dotted.path = value` per line,
// '#' starts a comment. Used for experiment configs, dataset manifests and
// checkpoint headers; values keep their source text so round-trips are exact.
class KvMap {
 public:
  static KvMap parse(const std::string& text) {
    KvMap kv;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::string stripped = strip(line.substr(0, line.find('#')));
      if (stripped.empty()) continue;
      const size_t eq = stripped.find('=');
      if (eq == std::string::npos)
        throw FormatError("kv line " + std::to_string(lineno) +
                          ": expected `key = value`");
      const std::string key = strip(stripped.substr(0, eq));
      const std::string value = strip(stripped.substr(eq + 1));
      if (key.empty())
        throw FormatError("kv line " + std::to_string(lineno) + ": empty key");
      kv.set(key, value);
    }
    return kv;
  }

  static KvMap load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse(ss.str());
  }

  void set(const std::string& key, const std::string& value) {
    entries_[key] = value;
  }
  void set_int(const std::string& key, int64_t v) { set(key, std::to_string(v)); }
  void set_double(const std::string& key, double v) {
    std::ostringstream ss;
    ss.precision(17);
    ss << v;
    set(key, ss.str());
  }
  void set_bool(const std::string& key, bool v) { set(key, v ? "true" : "false"); }

  bool has(const std::string& key) const { return entries_.count(key) != 0; }

  const std::string& get(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) throw ConfigError("missing config key: " + key);
    return it->second;
  }

  std::string get_or(const std::string& key, const std::string& dflt) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? dflt : it->second;
  }

  int64_t get_int(const std::string& key) const { return to_int(key, get(key)); }
  int64_t get_int_or(const std::string& key, int64_t dflt) const {
    return has(key) ? get_int(key) : dflt;
  }

  double get_double(const std::string& key) const {
    return to_double(key, get(key));
  }
  double get_double_or(const std::string& key, double dflt) const {
    return has(key) ? get_double(key) : dflt;
  }

  bool get_bool(const std::string& key) const {
    const std::string& v = get(key);
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    throw ConfigError("key " + key + ": expected boolean, got `" + v + "`");
  }
  bool get_bool_or(const std::string& key, bool dflt) const {
    return has(key) ? get_bool(key) : dflt;
  }

  // Comma-separated integer list, e.g. `model.encoder_widths = 32, 64`.
  std::vector<int64_t> get_int_list(const std::string& key) const {
    std::vector<int64_t> out;
    std::istringstream ss(get(key));
    std::string item;
    while (std::getline(ss, item, ',')) {
      const std::string s = strip(item);
      if (!s.empty()) out.push_back(to_int(key, s));
    }
    return out;
  }

  const std::map<std::string, std::string>& entries() const { return entries_; }

  // Keys are emitted sorted, so serialize() is a canonical form.
  std::string serialize() const {
    std::ostringstream out;
    for (const auto& [k, v] : entries_) out << k << " = " << v << "\n";
    return out.str();
  }

  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write " + path);
    f << serialize();
    if (!f) throw IoError("short write to " + path);
  }

  // Overlay: entries in `other` win.
  void merge(const KvMap& other) {
    for (const auto& [k, v] : other.entries_) entries_[k] = v;
  }

 private:
  static std::string strip(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  static int64_t to_int(const std::string& key, const std::string& s) {
    try {
      size_t pos = 0;
      int64_t v = std::stoll(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("key " + key + ": expected integer, got `" + s + "`");
    }
  }

  static double to_double(const std::string& key, const std::string& s) {
    try {
      size_t pos = 0;
      double v = std::stod(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("key " + key + ": expected number, got `" + s + "`");
    }
  }

  std::map<std::string, std::string> entries_;
};

}  // namespace mam4wf
