#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

namespace skf {

enum class Precision { f32, f64 };

Precision precision_from_string(const std::string& s);

struct CheckResult {
  std::string name;
  double value = 0.0;
  double threshold = 0.0;
  bool pass = false;
  std::string note;
};

struct VerifyReport {
  std::string suite;
  Precision precision = Precision::f64;
  std::vector<CheckResult> checks;

  bool all_pass() const {
    for (const auto& c : checks) {
      if (!c.pass) return false;
    }
    return true;
  }

  void print(std::FILE* out) const;
  void write_json(const std::string& path) const;
};

/// Runs one named verification suite
/// (superposition | conv | embed | variance | params | bspline | all)
/// at fixed small extents. Throws on an unknown suite name.
VerifyReport run_verify_suite(const std::string& suite, Precision precision,
                              std::uint64_t seed);

}  // namespace skf
