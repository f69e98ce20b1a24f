#include <catch2/catch_amalgamated.hpp>

#include "paranasal/transform.hpp"
#include "support.hpp"

using namespace paranasal;
using testsupport::TempDir;
using testsupport::blob_volume;

TEST_CASE("rotation matrices are orthonormal") {
  RigidTransform t{{31.0, -12.5, 77.0}, {0, 0, 0}};
  Mat3 r = t.rotation_matrix();
  Mat3 rtr = mat_mul(mat_transpose(r), r);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      REQUIRE(rtr[i][j] == Catch::Approx(i == j ? 1.0 : 0.0).margin(1e-9));
}

TEST_CASE("composing a transform with its inverse yields the identity") {
  RigidTransform t{{8.0, -3.0, 5.5}, {4.0, -7.25, 2.0}};
  for (const auto& id : {compose(t, inverse(t)), compose(inverse(t), t)}) {
    for (int a = 0; a < 3; ++a) {
      REQUIRE(std::abs(id.rotation_deg[a]) <= 1e-6);
      REQUIRE(std::abs(id.translation[a]) <= 1e-6);
    }
  }
}

TEST_CASE("euler extraction inverts matrix construction") {
  RigidTransform t{{-9.0, 14.0, 4.5}, {0, 0, 0}};
  auto angles = euler_from_matrix(t.rotation_matrix());
  for (int a = 0; a < 3; ++a)
    REQUIRE(angles[a] == Catch::Approx(t.rotation_deg[a]).margin(1e-10));
}

TEST_CASE("identity transform on matching dims is the identity map") {
  Volume v = testsupport::random_volume({8, 6, 10}, 9);
  Volume w = apply_transform(v, RigidTransform::identity());
  REQUIRE(w.data == v.data);
}

TEST_CASE("warp then inverse warp restores a smooth volume") {
  // Wide features: two interpolation passes stay well under the tolerance.
  const int n = 32;
  Volume v = Volume::cube(n);
  for (int k = 0; k < n; ++k)
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i) {
        double dx = (i - 14.0) / 8.0, dy = (j - 17.0) / 9.0, dz = (k - 15.0) / 8.5;
        v.at(i, j, k) = float(100.0 * std::exp(-0.5 * (dx * dx + dy * dy + dz * dz)) + 0.4 * i + 0.2 * j);
      }
  RigidTransform t{{6.0, -4.0, 3.0}, {2.5, -1.5, 3.0}};
  Volume back = apply_transform(apply_transform(v, t), inverse(t));
  float lo = v.data[0], hi = v.data[0];
  for (float x : v.data) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  double range = double(hi - lo);
  // Interior only: border voxels see clamped samples.
  double worst = 0;
  for (int k = 6; k < 26; ++k)
    for (int j = 6; j < 26; ++j)
      for (int i = 6; i < 26; ++i)
        worst = std::max(worst, std::abs(double(back.at(i, j, k)) - double(v.at(i, j, k))));
  REQUIRE(worst <= 0.02 * range);
}

TEST_CASE("one-voxel translation shifts a linear ramp exactly") {
  const int n = 16;
  Volume v = Volume::cube(n);
  for (int k = 0; k < n; ++k)
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i) v.at(i, j, k) = 3.0f * float(i) + 2.0f;
  RigidTransform t{{0, 0, 0}, {1.0, 0, 0}};
  Volume w = apply_transform(v, t);
  // w(i) samples v at i+1, so w(i) = ramp(i+1) away from the far border.
  for (int i = 0; i < n - 1; ++i)
    REQUIRE(double(w.at(i, 7, 7)) == Catch::Approx(3.0 * (i + 1) + 2.0).margin(1e-4));
}

TEST_CASE("transform records round-trip through their text form") {
  TempDir dir("tf");
  RigidTransform t{{1.25, -3.5, 0.0625}, {10.0, -0.125, 4.75}};
  save_transform(t, dir.file("t.txt"));
  RigidTransform r = load_transform(dir.file("t.txt"));
  for (int a = 0; a < 3; ++a) {
    REQUIRE(r.rotation_deg[a] == t.rotation_deg[a]);
    REQUIRE(r.translation[a] == t.translation[a]);
  }
  REQUIRE_THROWS_AS(load_transform(dir.file("missing.txt")), io_error);
}
