#include "dhs/text_format.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

namespace dhs {
namespace text {

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split_ws(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    std::size_t j = i;
    while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
    if (j > i) out.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == sep) {
      out.push_back(trim(s.substr(start, i - start)));
      start = i + 1;
    }
  }
  return out;
}

std::vector<Line> tokenize(std::string_view content) {
  std::vector<Line> lines;
  std::string section;
  int number = 0;
  std::size_t pos = 0;
  while (pos <= content.size()) {
    std::size_t end = content.find('\n', pos);
    if (end == std::string_view::npos) end = content.size();
    ++number;
    std::string_view raw = content.substr(pos, end - pos);
    if (auto hash = raw.find('#'); hash != std::string_view::npos) raw = raw.substr(0, hash);
    std::string body = trim(raw);
    if (!body.empty()) {
      if (body.front() == '[') {
        if (body.back() != ']') throw ParseError(number, "unterminated section header");
        section = trim(std::string_view(body).substr(1, body.size() - 2));
        if (section.empty()) throw ParseError(number, "empty section name");
      } else {
        lines.push_back(Line{number, section, body});
      }
    }
    if (end == content.size()) break;
    pos = end + 1;
  }
  return lines;
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view s, int line) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (!s.empty() && s.front() == '+') ++first;
  auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc() || res.ptr != last) {
    throw ParseError(line, "expected a number, got '" + std::string(s) + "'");
  }
  return v;
}

long long parse_int(std::string_view s, int line) {
  long long v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ParseError(line, "expected an integer, got '" + std::string(s) + "'");
  }
  return v;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

std::uint64_t fnv1a(std::string_view data) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[v & 0xF];
    v >>= 4;
  }
  return out;
}

}  // namespace text

Config Config::parse(std::string_view content) {
  Config cfg;
  for (const auto& line : text::tokenize(content)) {
    auto eq = line.body.find('=');
    if (eq == std::string::npos) throw ParseError(line.number, "expected 'key = value'");
    std::string key = text::trim(std::string_view(line.body).substr(0, eq));
    std::string value = text::trim(std::string_view(line.body).substr(eq + 1));
    if (key.empty()) throw ParseError(line.number, "empty key");
    auto& sec = cfg.sections_[line.section];
    if (sec.count(key)) throw ParseError(line.number, "duplicate key '" + key + "'");
    sec[key] = Entry{value, line.number};
  }
  return cfg;
}

Config Config::load(const std::filesystem::path& path) { return parse(text::read_file(path)); }

bool Config::has(const std::string& section, const std::string& key) const {
  auto s = sections_.find(section);
  return s != sections_.end() && s->second.count(key) > 0;
}

std::optional<std::string> Config::raw(const std::string& section, const std::string& key) const {
  auto s = sections_.find(section);
  if (s == sections_.end()) return std::nullopt;
  auto k = s->second.find(key);
  if (k == s->second.end()) return std::nullopt;
  return k->second.value;
}

std::string Config::get_string(const std::string& section, const std::string& key,
                               const std::string& fallback) const {
  return raw(section, key).value_or(fallback);
}

double Config::get_double(const std::string& section, const std::string& key,
                          double fallback) const {
  auto s = sections_.find(section);
  if (s == sections_.end()) return fallback;
  auto k = s->second.find(key);
  if (k == s->second.end()) return fallback;
  return text::parse_double(k->second.value, k->second.line);
}

long long Config::get_int(const std::string& section, const std::string& key,
                          long long fallback) const {
  auto s = sections_.find(section);
  if (s == sections_.end()) return fallback;
  auto k = s->second.find(key);
  if (k == s->second.end()) return fallback;
  return text::parse_int(k->second.value, k->second.line);
}

bool Config::get_bool(const std::string& section, const std::string& key, bool fallback) const {
  auto v = raw(section, key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes" || *v == "on") return true;
  if (*v == "false" || *v == "0" || *v == "no" || *v == "off") return false;
  throw ParseError(sections_.at(section).at(key).line, "expected a boolean, got '" + *v + "'");
}

std::vector<double> Config::get_doubles(const std::string& section, const std::string& key,
                                        const std::vector<double>& fallback) const {
  auto s = sections_.find(section);
  if (s == sections_.end()) return fallback;
  auto k = s->second.find(key);
  if (k == s->second.end()) return fallback;
  std::vector<double> out;
  for (const auto& part : text::split(k->second.value, ',')) {
    out.push_back(text::parse_double(part, k->second.line));
  }
  return out;
}

void Config::set(const std::string& section, const std::string& key, const std::string& value) {
  sections_[section][key] = Entry{value, 0};
}

std::string Config::to_string() const {
  std::string out;
  for (const auto& [name, entries] : sections_) {
    out += "[" + name + "]\n";
    for (const auto& [key, entry] : entries) out += key + " = " + entry.value + "\n";
  }
  return out;
}

std::string Config::fingerprint() const { return text::hex64(text::fnv1a(to_string())); }

Config Config::subset(const std::vector<std::string>& sections) const {
  Config out;
  for (const auto& name : sections) {
    auto it = sections_.find(name);
    if (it != sections_.end()) out.sections_[name] = it->second;
  }
  return out;
}

}  // namespace dhs
