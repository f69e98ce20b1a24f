#ifndef PARANASAL_TRANSFORM_HPP
#define PARANASAL_TRANSFORM_HPP

#include <array>
#include <cmath>
#include <fstream>
#include <string>

#include "paranasal/core.hpp"
#include "paranasal/volume.hpp"

namespace paranasal {

using Mat3 = std::array<std::array<double, 3>, 3>;

inline Mat3 mat_mul(const Mat3& a, const Mat3& b) {
  Mat3 c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) c[i][j] += a[i][k] * b[k][j];
  return c;
}

inline Mat3 mat_transpose(const Mat3& a) {
  Mat3 t;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) t[i][j] = a[j][i];
  return t;
}

inline std::array<double, 3> mat_apply(const Mat3& m, const std::array<double, 3>& v) {
  return {m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
          m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
          m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2]};
}

// Rigid motion in grid space: Euler angles in degrees about the canonical
// axes (applied about the volume center, order R = R2 * R1 * R0) plus a
// translation in voxels of the fixed grid.
//
// The transform is a resampling map: a point p of the fixed grid reads the
// moving volume at R * (p - c) + c + t, with c the grid center.
struct RigidTransform {
  std::array<double, 3> rotation_deg{0, 0, 0};
  std::array<double, 3> translation{0, 0, 0};

  static RigidTransform identity() { return {}; }

  Mat3 rotation_matrix() const {
    const double d2r = M_PI / 180.0;
    double ca = std::cos(rotation_deg[0] * d2r), sa = std::sin(rotation_deg[0] * d2r);
    double cb = std::cos(rotation_deg[1] * d2r), sb = std::sin(rotation_deg[1] * d2r);
    double cg = std::cos(rotation_deg[2] * d2r), sg = std::sin(rotation_deg[2] * d2r);
    Mat3 rx{{{1, 0, 0}, {0, ca, -sa}, {0, sa, ca}}};
    Mat3 ry{{{cb, 0, sb}, {0, 1, 0}, {-sb, 0, cb}}};
    Mat3 rz{{{cg, -sg, 0}, {sg, cg, 0}, {0, 0, 1}}};
    return mat_mul(rz, mat_mul(ry, rx));
  }
};

// Euler angles (degrees) from a rotation matrix, for the R2*R1*R0 order.
// Valid away from the |angle1| = 90 deg singularity, which rigid head
// alignment never approaches.
inline std::array<double, 3> euler_from_matrix(const Mat3& r) {
  const double r2d = 180.0 / M_PI;
  double b = std::asin(std::clamp(-r[2][0], -1.0, 1.0));
  double a = std::atan2(r[2][1], r[2][2]);
  double g = std::atan2(r[1][0], r[0][0]);
  return {a * r2d, b * r2d, g * r2d};
}

// Composition in resampling order: applying `compose(a, b)` equals warping
// by b first and then warping the result by a.
inline RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
  Mat3 ra = a.rotation_matrix(), rb = b.rotation_matrix();
  Mat3 r = mat_mul(ra, rb);
  auto rt = mat_apply(ra, b.translation);
  RigidTransform out;
  out.rotation_deg = euler_from_matrix(r);
  for (int i = 0; i < 3; ++i) out.translation[i] = rt[i] + a.translation[i];
  return out;
}

inline RigidTransform inverse(const RigidTransform& t) {
  Mat3 rt = mat_transpose(t.rotation_matrix());
  auto tt = mat_apply(rt, t.translation);
  RigidTransform out;
  out.rotation_deg = euler_from_matrix(rt);
  for (int i = 0; i < 3; ++i) out.translation[i] = -tt[i];
  return out;
}

// Warp v onto a target grid by trilinear pull-back sampling. Grid centers
// are aligned, so the identity transform on matching dims is the identity
// map. Out-of-range samples clamp to the border voxel.
inline Volume apply_transform(const Volume& v, const RigidTransform& t,
                              std::array<int, 3> target_dims) {
  Volume out(target_dims, v.spacing);
  Mat3 r = t.rotation_matrix();
  std::array<double, 3> ct, cv;
  for (int a = 0; a < 3; ++a) {
    ct[a] = 0.5 * (target_dims[a] - 1);
    cv[a] = 0.5 * (v.dims[a] - 1);
  }
  std::size_t idx = 0;
  for (int k = 0; k < target_dims[2]; ++k)
    for (int j = 0; j < target_dims[1]; ++j)
      for (int i = 0; i < target_dims[0]; ++i) {
        double px = i - ct[0], py = j - ct[1], pz = k - ct[2];
        double x = r[0][0] * px + r[0][1] * py + r[0][2] * pz + cv[0] + t.translation[0];
        double y = r[1][0] * px + r[1][1] * py + r[1][2] * pz + cv[1] + t.translation[1];
        double z = r[2][0] * px + r[2][1] * py + r[2][2] * pz + cv[2] + t.translation[2];
        out.data[idx++] = trilinear_sample(v, x, y, z);
      }
  return out;
}

inline Volume apply_transform(const Volume& v, const RigidTransform& t) {
  return apply_transform(v, t, v.dims);
}

// Audit record: one line of six numbers (three angles, three translations).
inline void save_transform(const RigidTransform& t, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw io_error("cannot write: " + path);
  f.precision(17);
  f << t.rotation_deg[0] << ' ' << t.rotation_deg[1] << ' ' << t.rotation_deg[2] << ' '
    << t.translation[0] << ' ' << t.translation[1] << ' ' << t.translation[2] << '\n';
}

inline RigidTransform load_transform(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw io_error("no such file: " + path);
  RigidTransform t;
  if (!(f >> t.rotation_deg[0] >> t.rotation_deg[1] >> t.rotation_deg[2] >>
        t.translation[0] >> t.translation[1] >> t.translation[2]))
    throw format_error("malformed transform record: " + path);
  return t;
}

}  // namespace paranasal

#endif  // PARANASAL_TRANSFORM_HPP
