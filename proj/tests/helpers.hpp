#pragma once

#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "deepgrading/util.hpp"
#include "deepgrading/volume.hpp"

namespace dgtest {

inline dg::Volume3D random_volume(dg::Dims3 d, dg::Rng& rng, float lo = -1.0f, float hi = 1.0f) {
  std::uniform_real_distribution<float> u(lo, hi);
  dg::Volume3D v(d, {1.0, 1.0, 1.0});
  for (float& x : v.data()) x = u(rng);
  return v;
}

/// Copy of a grid's values; safe to iterate when the grid is a temporary.
template <class T>
std::vector<T> values(const dg::Grid3<T>& g) {
  return g.data();
}

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() / ("dg_" + tag + "_" + std::to_string(std::random_device{}()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace dgtest
