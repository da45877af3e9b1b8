#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "repaint_lab/image.hpp"
#include "repaint_lab/rng.hpp"

namespace rlt {
using namespace repaint_lab;

inline BinaryMask random_mask(std::size_t w, std::size_t h, Rng& rng, double p = 0.5) {
  std::bernoulli_distribution coin(p);
  BinaryMask m(w, h);
  for (std::size_t i = 0; i < m.size(); ++i) m.set(i, coin(rng));
  return m;
}

inline Image random_image(std::size_t w, std::size_t h, Rng& rng, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Image img(w, h);
  for (auto& v : img.pixels()) v = u(rng);
  return img;
}

inline double mean_of(const std::vector<double>& v) {
  long double s = 0;
  for (double x : v) s += x;
  return static_cast<double>(s / v.size());
}

/// Unbiased sample variance.
inline double var_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  long double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return static_cast<double>(s / (v.size() - 1));
}

/// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name)
      : path(std::filesystem::temp_directory_path() / ("rl_" + name + "_" + std::to_string(std::random_device{}()))) {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

}  // namespace rlt
