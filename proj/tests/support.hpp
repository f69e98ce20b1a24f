#ifndef PARANASAL_TESTS_SUPPORT_HPP
#define PARANASAL_TESTS_SUPPORT_HPP

#include <filesystem>
#include <random>
#include <string>

#include "paranasal/core.hpp"
#include "paranasal/volume.hpp"

namespace testsupport {

// Scratch directory removed on destruction.
struct TempDir {
  std::filesystem::path path;

  explicit TempDir(const std::string& tag = "scratch") {
    auto base = std::filesystem::temp_directory_path();
    std::random_device rd;
    path = base / ("paranasal-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

inline paranasal::Volume random_volume(std::array<int, 3> dims, std::uint64_t seed,
                                       float lo = 0.0f, float hi = 100.0f) {
  paranasal::Volume v(dims, {1, 1, 1});
  paranasal::Rng rng(seed);
  for (auto& x : v.data) x = float(rng.uniform(lo, hi));
  return v;
}

// Smooth, asymmetric test anatomy: a handful of Gaussian bumps of varied
// width plus a gentle intensity gradient. Asymmetry pins down rotations.
inline paranasal::Volume blob_volume(int n, std::uint64_t seed = 7) {
  paranasal::Volume v = paranasal::Volume::cube(n);
  paranasal::Rng rng(seed);
  struct Bump {
    double c[3], sigma, amp;
  };
  std::vector<Bump> bumps;
  for (int b = 0; b < 5; ++b) {
    Bump bp;
    for (int a = 0; a < 3; ++a) bp.c[a] = rng.uniform(0.28, 0.72) * n;
    bp.sigma = rng.uniform(0.06, 0.16) * n;
    bp.amp = rng.uniform(40.0, 100.0);
    bumps.push_back(bp);
  }
  for (int k = 0; k < n; ++k)
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i) {
        double val = 5.0 * double(i + 2 * j + 3 * k) / (6.0 * n);
        for (const auto& b : bumps) {
          double dx = (i - b.c[0]) / b.sigma;
          double dy = (j - b.c[1]) / b.sigma;
          double dz = (k - b.c[2]) / b.sigma;
          val += b.amp * std::exp(-0.5 * (dx * dx + dy * dy + dz * dz));
        }
        v.at(i, j, k) = float(val);
      }
  return v;
}

}  // namespace testsupport

#endif
