#include "conceptmil/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

#include "conceptmil/errors.hpp"

namespace conceptmil {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) {
    s.remove_prefix(1);
  }
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) {
    s.remove_suffix(1);
  }
  return s;
}

// Strip a trailing comment that is not inside a quoted string.
std::string_view strip_comment(std::string_view s) {
  bool quoted = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"') quoted = !quoted;
    if (s[i] == '#' && !quoted) return s.substr(0, i);
  }
  return s;
}

FlatConfig::Value parse_value(std::string_view raw, const std::string& origin,
                              std::size_t line_no) {
  const std::string where = origin + ":" + std::to_string(line_no);
  if (raw.empty()) throw ParseError(where + ": empty value");
  if (raw.front() == '"') {
    if (raw.size() < 2 || raw.back() != '"') {
      throw ParseError(where + ": unterminated string");
    }
    std::string out;
    for (std::size_t i = 1; i + 1 < raw.size(); ++i) {
      if (raw[i] == '\\' && i + 2 < raw.size()) {
        ++i;
        switch (raw[i]) {
          case 'n': out.push_back('\n'); break;
          case 't': out.push_back('\t'); break;
          case '"': out.push_back('"'); break;
          case '\\': out.push_back('\\'); break;
          default:
            throw ParseError(where + ": unsupported escape");
        }
      } else {
        out.push_back(raw[i]);
      }
    }
    return out;
  }
  if (raw == "true") return true;
  if (raw == "false") return false;
  if (raw.front() == '[' || raw.front() == '{') {
    throw ParseError(where + ": arrays and tables are not supported");
  }
  const bool looks_float =
      raw.find_first_of(".eE") != std::string_view::npos &&
      raw.find("0x") == std::string_view::npos;
  if (!looks_float) {
    std::int64_t iv = 0;
    auto [ptr, ec] = std::from_chars(raw.data(), raw.data() + raw.size(), iv);
    if (ec == std::errc() && ptr == raw.data() + raw.size()) return iv;
  }
  try {
    std::size_t used = 0;
    const double dv = std::stod(std::string(raw), &used);
    if (used == raw.size()) return dv;
  } catch (...) {
  }
  throw ParseError(where + ": cannot parse value '" + std::string(raw) + "'");
}

}  // namespace

FlatConfig FlatConfig::parse(std::string_view text, const std::string& origin) {
  FlatConfig config;
  std::string section;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t eol = std::min(text.find('\n', pos), text.size());
    std::string_view line = trim(strip_comment(text.substr(pos, eol - pos)));
    ++line_no;
    pos = eol + 1;
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) {
        throw ParseError(origin + ":" + std::to_string(line_no) +
                         ": malformed section header");
      }
      section = std::string(trim(line.substr(1, line.size() - 2)));
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ParseError(origin + ":" + std::to_string(line_no) +
                       ": expected key = value");
    }
    std::string key(trim(line.substr(0, eq)));
    if (key.empty()) {
      throw ParseError(origin + ":" + std::to_string(line_no) + ": empty key");
    }
    if (!section.empty()) key = section + "." + key;
    config.set(std::move(key),
               parse_value(trim(line.substr(eq + 1)), origin, line_no));
  }
  return config;
}

FlatConfig FlatConfig::parse_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str(), path.string());
}

const FlatConfig::Value* FlatConfig::find(std::string_view key) const {
  for (const auto& [k, v] : entries_) {
    if (k == key) return &v;
  }
  return nullptr;
}

bool FlatConfig::has(std::string_view key) const { return find(key) != nullptr; }

void FlatConfig::set(std::string key, Value value) {
  for (auto& [k, v] : entries_) {
    if (k == key) {
      v = std::move(value);
      return;
    }
  }
  entries_.emplace_back(std::move(key), std::move(value));
}

void FlatConfig::merge(const FlatConfig& other) {
  for (const auto& [k, v] : other.entries_) set(k, v);
}

std::string FlatConfig::get_string(std::string_view key, std::string fallback) const {
  const Value* v = find(key);
  if (!v) return fallback;
  if (const auto* s = std::get_if<std::string>(v)) return *s;
  throw ConfigError("config key '" + std::string(key) + "' is not a string");
}

std::int64_t FlatConfig::get_int(std::string_view key, std::int64_t fallback) const {
  const Value* v = find(key);
  if (!v) return fallback;
  if (const auto* i = std::get_if<std::int64_t>(v)) return *i;
  throw ConfigError("config key '" + std::string(key) + "' is not an integer");
}

double FlatConfig::get_double(std::string_view key, double fallback) const {
  const Value* v = find(key);
  if (!v) return fallback;
  if (const auto* d = std::get_if<double>(v)) return *d;
  if (const auto* i = std::get_if<std::int64_t>(v)) return static_cast<double>(*i);
  throw ConfigError("config key '" + std::string(key) + "' is not a number");
}

bool FlatConfig::get_bool(std::string_view key, bool fallback) const {
  const Value* v = find(key);
  if (!v) return fallback;
  if (const auto* b = std::get_if<bool>(v)) return *b;
  throw ConfigError("config key '" + std::string(key) + "' is not a boolean");
}

namespace {

std::string format_value(const FlatConfig::Value& value) {
  struct Visitor {
    std::string operator()(const std::string& s) const {
      std::string out = "\"";
      for (char c : s) {
        switch (c) {
          case '"': out += "\\\""; break;
          case '\\': out += "\\\\"; break;
          case '\n': out += "\\n"; break;
          case '\t': out += "\\t"; break;
          default: out.push_back(c);
        }
      }
      return out + "\"";
    }
    std::string operator()(std::int64_t i) const { return std::to_string(i); }
    std::string operator()(double d) const {
      std::ostringstream os;
      os.precision(17);
      os << d;
      std::string s = os.str();
      // Keep floats re-parseable as floats.
      if (s.find_first_of(".eEnN") == std::string::npos) s += ".0";
      return s;
    }
    std::string operator()(bool b) const { return b ? "true" : "false"; }
  };
  return std::visit(Visitor{}, value);
}

}  // namespace

std::string FlatConfig::to_toml() const {
  // Group by section, keys sorted inside each for stable output.
  std::map<std::string, std::map<std::string, const Value*>> sections;
  for (const auto& [key, value] : entries_) {
    const std::size_t dot = key.find('.');
    if (dot == std::string::npos) {
      sections[""][key] = &value;
    } else {
      sections[key.substr(0, dot)][key.substr(dot + 1)] = &value;
    }
  }
  std::string out;
  for (const auto& [section, keys] : sections) {
    if (!section.empty()) {
      if (!out.empty()) out += "\n";
      out += "[" + section + "]\n";
    }
    for (const auto& [key, value] : keys) {
      out += key + " = " + format_value(*value) + "\n";
    }
  }
  return out;
}

void FlatConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write config " + path.string());
  out << to_toml();
}

}  // namespace conceptmil
