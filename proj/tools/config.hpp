#pragma once

#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace landscape::cli {

/// Bad or incomplete configuration (exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// `key = value` lines grouped under `[section]` headers; `#` starts a
/// comment. Keys before the first header belong to [run].
class Config {
 public:
  static Config parse(const std::string& text, const std::string& origin = "<string>");
  static Config load(const std::string& path);

  bool has(const std::string& section, const std::string& key) const;
  std::string text(const std::string& section, const std::string& key) const;
  std::string text(const std::string& section, const std::string& key, const std::string& fallback) const;
  double number(const std::string& section, const std::string& key) const;
  double number(const std::string& section, const std::string& key, double fallback) const;
  long integer(const std::string& section, const std::string& key, long fallback) const;
  std::vector<double> numbers(const std::string& section, const std::string& key) const;
  std::vector<long> integers(const std::string& section, const std::string& key) const;

  /// Rejects sections and keys outside `allowed`, naming the first offender.
  void restrict_to(const std::map<std::string, std::set<std::string>>& allowed) const;

  const std::map<std::string, std::map<std::string, std::string>>& entries() const { return entries_; }

 private:
  std::string where(const std::string& section, const std::string& key) const;
  std::map<std::string, std::map<std::string, std::string>> entries_;
  std::map<std::string, int> lines_;  // "section.key" -> line number
  std::string origin_;
};

double parse_number(const std::string& text, const std::string& what);

}  // namespace landscape::cli
