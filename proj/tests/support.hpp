#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <unistd.h>

#include "crfreid/pipeline.hpp"

namespace testing {

namespace fs = std::filesystem;

/// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("crfreid_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline crfreid::FeatureMatrix random_points(std::mt19937_64& rng, crfreid::Index n, crfreid::Index d,
                                            double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  crfreid::FeatureMatrix m(n, d);
  for (crfreid::Index i = 0; i < n; ++i)
    for (crfreid::Index j = 0; j < d; ++j) m(i, j) = g(rng);
  return m;
}

inline crfreid::Vector random_uniform(std::mt19937_64& rng, crfreid::Index n, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  crfreid::Vector v(n);
  for (crfreid::Index i = 0; i < n; ++i) v[i] = u(rng);
  return v;
}

/// Small dataset with a single standardized euclidean channel "f".
inline crfreid::Dataset small_dataset(const std::vector<std::string>& persons, const crfreid::FeatureMatrix& f,
                                      bool standardize = false) {
  crfreid::Dataset ds;
  for (std::size_t i = 0; i < persons.size(); ++i) ds.images.push_back({"img" + std::to_string(i), persons[i]});
  crfreid::ChannelSpec ch;
  ch.name = "f";
  ch.dim = static_cast<int>(f.cols());
  ch.standardize = standardize;
  ch.file = "f.csv";
  ds.channels.push_back(ch);
  ds.matrices["f"] = f;
  crfreid::finalize_dataset(ds);
  return ds;
}

}  // namespace testing
