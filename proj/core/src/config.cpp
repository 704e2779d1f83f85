#include "skf/config.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "skf/tensor.hpp"

namespace skf {

using nlohmann::json;

FlatConfig FlatConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("config: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_json(ss.str());
}

FlatConfig FlatConfig::parse_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(std::string("config: invalid JSON: ") + e.what());
  }
  if (!doc.is_object()) {
    throw Error("config: top-level JSON object of flat keys required");
  }
  FlatConfig cfg;
  for (const auto& [key, value] : doc.items()) {
    if (value.is_boolean()) {
      cfg.set(key, value.get<bool>());
    } else if (value.is_number_integer()) {
      cfg.set(key, value.get<std::int64_t>());
    } else if (value.is_number_float()) {
      cfg.set(key, value.get<double>());
    } else if (value.is_string()) {
      cfg.set(key, value.get<std::string>());
    } else {
      throw Error("config: key '" + key + "' must hold a scalar value");
    }
  }
  return cfg;
}

std::int64_t FlatConfig::get_int(const std::string& key,
                                 std::int64_t fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  if (auto* v = std::get_if<std::int64_t>(&it->second)) return *v;
  if (auto* v = std::get_if<double>(&it->second)) {
    if (*v == std::floor(*v)) return static_cast<std::int64_t>(*v);
  }
  throw Error("config: key '" + key + "' is not an integer");
}

double FlatConfig::get_double(const std::string& key, double fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  if (auto* v = std::get_if<double>(&it->second)) return *v;
  if (auto* v = std::get_if<std::int64_t>(&it->second)) {
    return static_cast<double>(*v);
  }
  throw Error("config: key '" + key + "' is not numeric");
}

bool FlatConfig::get_bool(const std::string& key, bool fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  if (auto* v = std::get_if<bool>(&it->second)) return *v;
  throw Error("config: key '" + key + "' is not boolean");
}

std::string FlatConfig::get_string(const std::string& key,
                                   const std::string& fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  if (auto* v = std::get_if<std::string>(&it->second)) return *v;
  throw Error("config: key '" + key + "' is not a string");
}

void FlatConfig::set_from_text(const std::string& key,
                               const std::string& text) {
  if (text == "true" || text == "false") {
    set(key, text == "true");
    return;
  }
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(text, &pos);
    if (pos == text.size()) {
      set(key, static_cast<std::int64_t>(v));
      return;
    }
  } catch (...) {
  }
  try {
    std::size_t pos = 0;
    const double v = std::stod(text, &pos);
    if (pos == text.size()) {
      set(key, v);
      return;
    }
  } catch (...) {
  }
  set(key, text);
}

namespace {

json value_to_json(const FlatConfig::Value& v) {
  if (auto* b = std::get_if<bool>(&v)) return *b;
  if (auto* i = std::get_if<std::int64_t>(&v)) return *i;
  if (auto* d = std::get_if<double>(&v)) return *d;
  return std::get<std::string>(v);
}

std::string value_to_text(const FlatConfig::Value& v) {
  return value_to_json(v).dump();
}

}  // namespace

std::string FlatConfig::to_json() const {
  json doc = json::object();
  for (const auto& [key, value] : entries_) {
    doc[key] = value_to_json(value);
  }
  return doc.dump(2);
}

std::uint64_t FlatConfig::hash_subset(const std::string& prefix) const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&](const std::string& s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& [key, value] : entries_) {
    if (key.rfind(prefix, 0) != 0) continue;
    feed(key);
    feed("=");
    feed(value_to_text(value));
    feed("\n");
  }
  return h;
}

void FlatConfig::merge(const FlatConfig& other) {
  for (const auto& [key, value] : other.entries_) {
    entries_[key] = value;
  }
}

std::string iso8601_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[80];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02dZ",
                tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday, tm.tm_hour,
                tm.tm_min, tm.tm_sec);
  return buf;
}

void RunManifest::write(const std::string& dir) const {
  std::filesystem::create_directories(dir);
  json doc;
  doc["command"] = command;
  doc["config_path"] = config_path;
  doc["config"] = json::parse(config.to_json());
  doc["seed"] = seed;
  doc["out_dir"] = out_dir;
  doc["started_at"] = started_at;
  if (!finished_at.empty()) doc["finished_at"] = finished_at;
  std::ofstream out(std::filesystem::path(dir) / "manifest.json");
  if (!out) throw Error("manifest: cannot write to " + dir);
  out << doc.dump(2) << "\n";
}

}  // namespace skf
