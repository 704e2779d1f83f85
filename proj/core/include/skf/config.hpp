#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <variant>

namespace skf {

/// Flat key-path configuration: one structured text document (JSON object of
/// scalar values), every CLI flag overriding one key. Serves as the single
/// source of truth snapshotted into run manifests and checkpoints.
class FlatConfig {
public:
  using Value = std::variant<bool, std::int64_t, double, std::string>;

  static FlatConfig from_file(const std::string& path);
  static FlatConfig parse_json(const std::string& text);

  bool has(const std::string& key) const { return entries_.count(key) > 0; }

  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::string get_string(const std::string& key,
                         const std::string& fallback) const;

  void set(const std::string& key, Value value) { entries_[key] = value; }

  /// Parses "true"/"false", integers, reals, else keeps the raw string.
  void set_from_text(const std::string& key, const std::string& text);

  /// Canonical JSON with sorted keys.
  std::string to_json() const;

  /// FNV-1a 64 over the canonical "key=value" lines whose key starts with
  /// prefix; empty prefix hashes the whole document.
  std::uint64_t hash_subset(const std::string& prefix) const;

  const std::map<std::string, Value>& entries() const { return entries_; }

  /// Copies every entry of `other` over this config.
  void merge(const FlatConfig& other);

private:
  std::map<std::string, Value> entries_;
};

std::string iso8601_now();

struct RunManifest {
  std::string command;
  std::string config_path;
  FlatConfig config;
  std::uint64_t seed = 0;
  std::string out_dir;
  std::string started_at;
  std::string finished_at;

  /// Writes <dir>/manifest.json (creates the directory first).
  void write(const std::string& dir) const;
};

}  // namespace skf
