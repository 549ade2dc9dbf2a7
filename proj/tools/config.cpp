#include "config.hpp"

#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace landscape::cli {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

}  // namespace

double parse_number(const std::string& text, const std::string& what) {
  const std::string t = trim(text);
  if (t.empty()) throw ConfigError(what + ": empty value");
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(t.c_str(), &end);
  if (end != t.c_str() + t.size() || errno == ERANGE || !std::isfinite(v))
    throw ConfigError(what + ": '" + t + "' is not a finite number");
  return v;
}

Config Config::parse(const std::string& text, const std::string& origin) {
  Config c;
  c.origin_ = origin;
  std::stringstream ss(text);
  std::string line, section = "run";
  int n = 0;
  while (std::getline(ss, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3)
        throw ConfigError(origin + ":" + std::to_string(n) + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(origin + ":" + std::to_string(n) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(n) + ": empty key");
    if (c.entries_[section].count(key))
      throw ConfigError(origin + ":" + std::to_string(n) + ": duplicate key [" + section + "] " + key);
    c.entries_[section][key] = value;
    c.lines_[section + "." + key] = n;
  }
  return c;
}

Config Config::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path);
}

std::string Config::where(const std::string& section, const std::string& key) const {
  const auto it = lines_.find(section + "." + key);
  const std::string at = it == lines_.end() ? origin_ : origin_ + ":" + std::to_string(it->second);
  return at + ": [" + section + "] " + key;
}

bool Config::has(const std::string& section, const std::string& key) const {
  const auto s = entries_.find(section);
  return s != entries_.end() && s->second.count(key);
}

std::string Config::text(const std::string& section, const std::string& key) const {
  if (!has(section, key)) throw ConfigError(origin_ + ": missing required key [" + section + "] " + key);
  return entries_.at(section).at(key);
}

std::string Config::text(const std::string& section, const std::string& key, const std::string& fallback) const {
  return has(section, key) ? entries_.at(section).at(key) : fallback;
}

double Config::number(const std::string& section, const std::string& key) const {
  return parse_number(text(section, key), where(section, key));
}

double Config::number(const std::string& section, const std::string& key, double fallback) const {
  return has(section, key) ? number(section, key) : fallback;
}

long Config::integer(const std::string& section, const std::string& key, long fallback) const {
  if (!has(section, key)) return fallback;
  const double v = number(section, key);
  if (v != std::floor(v) || std::abs(v) > 9e15) throw ConfigError(where(section, key) + ": expected an integer");
  return static_cast<long>(v);
}

std::vector<double> Config::numbers(const std::string& section, const std::string& key) const {
  std::vector<double> out;
  for (const auto& item : split_list(text(section, key))) out.push_back(parse_number(item, where(section, key)));
  return out;
}

std::vector<long> Config::integers(const std::string& section, const std::string& key) const {
  std::vector<long> out;
  for (double v : numbers(section, key)) {
    if (v != std::floor(v)) throw ConfigError(where(section, key) + ": expected integers");
    out.push_back(static_cast<long>(v));
  }
  return out;
}

void Config::restrict_to(const std::map<std::string, std::set<std::string>>& allowed) const {
  for (const auto& [section, keys] : entries_) {
    const auto a = allowed.find(section);
    if (a == allowed.end()) throw ConfigError(origin_ + ": unknown section [" + section + "]");
    for (const auto& [key, value] : keys)
      if (!a->second.count(key)) throw ConfigError(where(section, key) + ": unknown key for this command");
  }
}

}  // namespace landscape::cli
