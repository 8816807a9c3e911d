#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "fccausal/dataset.hpp"
#include "fccausal/model_backend.hpp"

namespace testsupport {

inline std::filesystem::path fixture(const std::string& name) {
  return std::filesystem::path(FIXTURE_DIR) / name;
}

inline std::vector<fccausal::QueryRecord> corpus() {
  return fccausal::load_dataset(fixture("queries20.jsonl"), true).records;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& tag) {
  std::random_device rd;
  const auto dir = std::filesystem::temp_directory_path() /
                   ("fccausal-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline double linf(const fccausal::LogitsVector& a, const fccausal::LogitsVector& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.values[i] - b.values[i]));
  return m;
}

// Plain two-pass Euclidean norm of the difference, kept separate from the
// library's distance routine.
inline double l2(const fccausal::LogitsVector& a, const fccausal::LogitsVector& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.values[i] - b.values[i];
    s += d * d;
  }
  return std::sqrt(s);
}

inline double rel_err(double got, double want) {
  const double scale = std::max(std::abs(want), 1e-12);
  return std::abs(got - want) / scale;
}

}  // namespace testsupport
