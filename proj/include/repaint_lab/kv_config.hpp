#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace repaint_lab {

/// Parse or validation failure in a text config; `line()` is 1-based, 0 when
/// the problem is not tied to a line.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& msg, int line = 0)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + msg : msg), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

/// `key = value` lines grouped under optional `[kind name]` headers. Lines
/// before the first header belong to an unnamed global section. `#` starts a
/// comment.
class KvDocument {
 public:
  struct Entry {
    std::string value;
    int line;
  };
  struct Section {
    std::string kind;
    std::string name;
    int line = 0;
    std::map<std::string, Entry> entries;

    bool has(const std::string& key) const { return entries.count(key) != 0; }

    const Entry& entry(const std::string& key) const {
      auto it = entries.find(key);
      if (it == entries.end()) throw ConfigError("[" + kind + (name.empty() ? "" : " " + name) + "] missing key '" + key + "'", line);
      return it->second;
    }

    std::string str(const std::string& key) const { return entry(key).value; }
    std::string str(const std::string& key, const std::string& fallback) const {
      return has(key) ? str(key) : fallback;
    }

    double num(const std::string& key) const {
      const auto& e = entry(key);
      return parse_double(e.value, e.line, key);
    }
    double num(const std::string& key, double fallback) const { return has(key) ? num(key) : fallback; }

    long long integer(const std::string& key) const {
      const auto& e = entry(key);
      std::size_t pos = 0;
      long long v = 0;
      try {
        v = std::stoll(e.value, &pos);
      } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': expected integer, got '" + e.value + "'", e.line);
      }
      if (pos != e.value.size()) throw ConfigError("key '" + key + "': expected integer, got '" + e.value + "'", e.line);
      return v;
    }
    long long integer(const std::string& key, long long fallback) const { return has(key) ? integer(key) : fallback; }

    std::vector<double> numbers(const std::string& key) const {
      const auto& e = entry(key);
      std::vector<double> out;
      for (auto& part : split_list(e.value)) out.push_back(parse_double(part, e.line, key));
      return out;
    }

    std::vector<std::string> list(const std::string& key) const { return split_list(entry(key).value); }
  };

  static KvDocument parse(std::istream& is) {
    KvDocument doc;
    doc.sections_.push_back(Section{"", "", 0, {}});
    std::string raw;
    int lineno = 0;
    while (std::getline(is, raw)) {
      ++lineno;
      std::string line = trim(raw.substr(0, raw.find('#')));
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']') throw ConfigError("unterminated section header", lineno);
        std::string inner = trim(line.substr(1, line.size() - 2));
        if (inner.empty()) throw ConfigError("empty section header", lineno);
        auto sp = inner.find_first_of(" \t");
        Section s;
        s.kind = inner.substr(0, sp);
        s.name = sp == std::string::npos ? "" : trim(inner.substr(sp));
        s.line = lineno;
        doc.sections_.push_back(std::move(s));
        continue;
      }
      auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError("expected 'key = value'", lineno);
      std::string key = trim(line.substr(0, eq));
      std::string value = trim(line.substr(eq + 1));
      if (key.empty()) throw ConfigError("empty key", lineno);
      auto& entries = doc.sections_.back().entries;
      if (entries.count(key)) throw ConfigError("duplicate key '" + key + "'", lineno);
      entries[key] = Entry{value, lineno};
    }
    return doc;
  }

  static KvDocument parse_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config '" + path.string() + "'");
    return parse(is);
  }

  const Section& global() const { return sections_.front(); }

  std::vector<const Section*> sections(const std::string& kind) const {
    std::vector<const Section*> out;
    for (auto& s : sections_)
      if (s.kind == kind) out.push_back(&s);
    return out;
  }

  const std::vector<Section>& all() const { return sections_; }

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  static std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string part;
    while (std::getline(ss, part, ',')) {
      part = trim(part);
      if (!part.empty()) out.push_back(part);
    }
    return out;
  }

 private:
  static double parse_double(const std::string& s, int line, const std::string& key) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size())
      throw ConfigError("key '" + key + "': expected number, got '" + s + "'", line);
    return v;
  }

  std::vector<Section> sections_;
};

}  // namespace repaint_lab
