#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

namespace conceptmil {

// Flat TOML: [section] headers plus scalar key = value lines (strings,
// integers, floats, booleans). Keys are stored dotted ("train.lr");
// serialization groups them back into sections.
class FlatConfig {
 public:
  using Value = std::variant<std::string, std::int64_t, double, bool>;

  static FlatConfig parse(std::string_view text, const std::string& origin = "<string>");
  static FlatConfig parse_file(const std::filesystem::path& path);

  bool has(std::string_view key) const;
  void set(std::string key, Value value);
  // Overlay every key of `other` on top of this config.
  void merge(const FlatConfig& other);

  std::string get_string(std::string_view key, std::string fallback) const;
  std::int64_t get_int(std::string_view key, std::int64_t fallback) const;
  double get_double(std::string_view key, double fallback) const;
  bool get_bool(std::string_view key, bool fallback) const;

  std::string to_toml() const;
  void save(const std::filesystem::path& path) const;

  const std::vector<std::pair<std::string, Value>>& entries() const {
    return entries_;
  }

 private:
  const Value* find(std::string_view key) const;
  std::vector<std::pair<std::string, Value>> entries_;  // insertion order
};

}  // namespace conceptmil
