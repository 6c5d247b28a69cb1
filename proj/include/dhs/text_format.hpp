#pragma once

// Line-oriented text formats shared by topology files and experiment configs.
//
// Both formats use `[section]` headers and `#` comments. Topology sections hold
// whitespace-separated rows; config sections hold `key = value` pairs.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dhs {

class ParseError : public std::runtime_error {
 public:
  ParseError(int line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

namespace text {

struct Line {
  int number = 0;
  std::string section;
  std::string body;  // comment stripped, trimmed
};

std::string trim(std::string_view s);
std::vector<std::string> split_ws(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);

// Splits `content` into non-empty logical lines tagged with their section.
// Section headers themselves are consumed.
std::vector<Line> tokenize(std::string_view content);

// Shortest decimal representation that parses back to the same double.
std::string format_double(double v);
double parse_double(std::string_view s, int line);
long long parse_int(std::string_view s, int line);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view content);

// 64-bit FNV-1a; stable across platforms, used for fingerprints.
std::uint64_t fnv1a(std::string_view data);
std::string hex64(std::uint64_t v);

}  // namespace text

// `[section]` / `key = value` configuration. Keys are unique per section.
class Config {
 public:
  Config() = default;
  static Config parse(std::string_view content);
  static Config load(const std::filesystem::path& path);

  bool has(const std::string& section, const std::string& key) const;
  std::optional<std::string> raw(const std::string& section, const std::string& key) const;

  std::string get_string(const std::string& section, const std::string& key,
                         const std::string& fallback) const;
  double get_double(const std::string& section, const std::string& key, double fallback) const;
  long long get_int(const std::string& section, const std::string& key, long long fallback) const;
  bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
  std::vector<double> get_doubles(const std::string& section, const std::string& key,
                                  const std::vector<double>& fallback) const;

  void set(const std::string& section, const std::string& key, const std::string& value);

  // Canonical text: sections and keys in lexicographic order.
  std::string to_string() const;
  // Fingerprint of the canonical text.
  std::string fingerprint() const;
  // Only the named sections (missing ones are skipped).
  Config subset(const std::vector<std::string>& sections) const;

 private:
  struct Entry {
    std::string value;
    int line = 0;
  };
  std::map<std::string, std::map<std::string, Entry>> sections_;
};

}  // namespace dhs
