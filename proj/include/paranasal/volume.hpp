#ifndef PARANASAL_VOLUME_HPP
#define PARANASAL_VOLUME_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "paranasal/core.hpp"

namespace paranasal {

// A 3D scalar grid with voxel spacing. After loading, grids are always in
// the canonical axis order: axis 0 = left-right (sagittal direction),
// axis 1 = posterior-anterior, axis 2 = inferior-superior. Axis 0 is the
// fastest-varying index in memory.
struct Volume {
  std::array<int, 3> dims{0, 0, 0};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::vector<float> data;

  Volume() = default;
  Volume(std::array<int, 3> d, std::array<double, 3> s, float fill = 0.0f)
      : dims(d), spacing(s) {
    if (d[0] < 1 || d[1] < 1 || d[2] < 1)
      throw std::invalid_argument("Volume: all dimensions must be >= 1");
    if (s[0] <= 0 || s[1] <= 0 || s[2] <= 0)
      throw std::invalid_argument("Volume: spacing must be positive");
    data.assign(std::size_t(d[0]) * d[1] * d[2], fill);
  }

  static Volume cube(int n, float fill = 0.0f) {
    return Volume({n, n, n}, {1.0, 1.0, 1.0}, fill);
  }

  std::size_t size() const { return data.size(); }

  std::size_t index(int i, int j, int k) const {
    return std::size_t(i) + std::size_t(dims[0]) * (std::size_t(j) + std::size_t(dims[1]) * k);
  }

  float& at(int i, int j, int k) { return data[index(i, j, k)]; }
  float at(int i, int j, int k) const { return data[index(i, j, k)]; }

  bool same_grid(const Volume& o) const {
    return dims == o.dims && spacing == o.spacing;
  }
};

namespace detail {
inline float clamped_at(const Volume& v, int i, int j, int k) {
  i = std::clamp(i, 0, v.dims[0] - 1);
  j = std::clamp(j, 0, v.dims[1] - 1);
  k = std::clamp(k, 0, v.dims[2] - 1);
  return v.at(i, j, k);
}
}  // namespace detail

// Trilinear sample at a continuous grid coordinate. Out-of-range positions
// clamp to the boundary voxel.
inline float trilinear_sample(const Volume& v, double x, double y, double z) {
  double fx = std::floor(x), fy = std::floor(y), fz = std::floor(z);
  int i0 = int(fx), j0 = int(fy), k0 = int(fz);
  double ax = x - fx, ay = y - fy, az = z - fz;

  float c000 = detail::clamped_at(v, i0, j0, k0);
  float c100 = detail::clamped_at(v, i0 + 1, j0, k0);
  float c010 = detail::clamped_at(v, i0, j0 + 1, k0);
  float c110 = detail::clamped_at(v, i0 + 1, j0 + 1, k0);
  float c001 = detail::clamped_at(v, i0, j0, k0 + 1);
  float c101 = detail::clamped_at(v, i0 + 1, j0, k0 + 1);
  float c011 = detail::clamped_at(v, i0, j0 + 1, k0 + 1);
  float c111 = detail::clamped_at(v, i0 + 1, j0 + 1, k0 + 1);

  double c00 = c000 + ax * (c100 - c000);
  double c10 = c010 + ax * (c110 - c010);
  double c01 = c001 + ax * (c101 - c001);
  double c11 = c011 + ax * (c111 - c011);
  double c0 = c00 + ay * (c10 - c00);
  double c1 = c01 + ay * (c11 - c01);
  return float(c0 + az * (c1 - c0));
}

// Trilinear resample to target_dims. Voxel-center grids are aligned over
// the shared physical extent, so spacing rescales as dims_old / dims_new.
// Resampling to the volume's own dims reproduces it voxel-for-voxel.
inline Volume resample(const Volume& v, std::array<int, 3> target_dims) {
  if (target_dims[0] < 1 || target_dims[1] < 1 || target_dims[2] < 1)
    throw std::invalid_argument("resample: target dims must be >= 1");
  std::array<double, 3> scale;
  std::array<double, 3> new_spacing;
  for (int a = 0; a < 3; ++a) {
    scale[a] = double(v.dims[a]) / double(target_dims[a]);
    new_spacing[a] = v.spacing[a] * scale[a];
  }
  Volume out(target_dims, new_spacing);
  std::size_t idx = 0;
  for (int k = 0; k < target_dims[2]; ++k) {
    double z = (k + 0.5) * scale[2] - 0.5;
    for (int j = 0; j < target_dims[1]; ++j) {
      double y = (j + 0.5) * scale[1] - 0.5;
      for (int i = 0; i < target_dims[0]; ++i) {
        double x = (i + 0.5) * scale[0] - 0.5;
        out.data[idx++] = trilinear_sample(v, x, y, z);
      }
    }
  }
  return out;
}

// Mirror across the sagittal midplane: the grid is reversed along axis 0.
// An exact involution.
inline Volume flip_lr(const Volume& v) {
  Volume out(v.dims, v.spacing);
  const int d0 = v.dims[0];
  std::size_t rows = std::size_t(v.dims[1]) * v.dims[2];
  for (std::size_t r = 0; r < rows; ++r) {
    const float* src = v.data.data() + r * d0;
    float* dst = out.data.data() + r * d0;
    for (int i = 0; i < d0; ++i) dst[i] = src[d0 - 1 - i];
  }
  return out;
}

// Z-score normalization (mean 0, std 1). A constant volume maps to zeros.
inline Volume normalize_intensity(const Volume& v) {
  double sum = 0.0;
  for (float x : v.data) sum += x;
  double mean = sum / double(v.size());
  double ss = 0.0;
  for (float x : v.data) {
    double d = x - mean;
    ss += d * d;
  }
  double var = ss / double(v.size());
  Volume out(v.dims, v.spacing);
  if (var <= 0.0) return out;
  double inv_std = 1.0 / std::sqrt(var);
  for (std::size_t i = 0; i < v.size(); ++i)
    out.data[i] = float((v.data[i] - mean) * inv_std);
  return out;
}

// Integer crop of a size-sized box starting at lo. The window must lie
// fully inside the volume.
inline Volume crop(const Volume& v, std::array<int, 3> lo, std::array<int, 3> size) {
  for (int a = 0; a < 3; ++a) {
    if (lo[a] < 0 || size[a] < 1 || lo[a] + size[a] > v.dims[a])
      throw std::invalid_argument("crop: window outside volume");
  }
  Volume out(size, v.spacing);
  std::size_t idx = 0;
  for (int k = 0; k < size[2]; ++k)
    for (int j = 0; j < size[1]; ++j) {
      const float* src = &v.data[v.index(lo[0], lo[1] + j, lo[2] + k)];
      for (int i = 0; i < size[0]; ++i) out.data[idx++] = src[i];
    }
  return out;
}

}  // namespace paranasal

#endif  // PARANASAL_VOLUME_HPP
