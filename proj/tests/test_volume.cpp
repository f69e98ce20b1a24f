#include <catch2/catch_amalgamated.hpp>

#include "paranasal/volume.hpp"
#include "support.hpp"

using namespace paranasal;
using testsupport::random_volume;

TEST_CASE("flip_lr is an exact involution") {
  Volume v = random_volume({9, 7, 5}, 11);
  Volume f = flip_lr(flip_lr(v));
  REQUIRE(f.dims == v.dims);
  REQUIRE(f.data == v.data);
}

TEST_CASE("flip_lr leaves a sagittally symmetric volume unchanged") {
  Volume v = Volume::cube(8);
  Rng rng(3);
  for (int k = 0; k < 8; ++k)
    for (int j = 0; j < 8; ++j)
      for (int i = 0; i < 4; ++i) {
        float x = float(rng.uniform());
        v.at(i, j, k) = x;
        v.at(7 - i, j, k) = x;
      }
  REQUIRE(flip_lr(v).data == v.data);
}

TEST_CASE("flip_lr moves a marked voxel to the mirrored index") {
  Volume v = Volume::cube(11);
  v.at(2, 5, 7) = 1.0f;
  Volume f = flip_lr(v);
  REQUIRE(f.at(11 - 1 - 2, 5, 7) == 1.0f);
  REQUIRE(f.at(2, 5, 7) == 0.0f);
}

TEST_CASE("resample to own dims is voxel-identical") {
  Volume v = random_volume({12, 9, 14}, 5);
  Volume r = resample(v, v.dims);
  REQUIRE(r.data == v.data);
  REQUIRE(r.spacing == v.spacing);
}

TEST_CASE("resample preserves constant volumes exactly") {
  Volume v({8, 8, 8}, {2, 1, 1}, 3.25f);
  for (auto dims : {std::array<int, 3>{3, 5, 7}, {16, 16, 16}, {1, 1, 1}, {13, 2, 9}}) {
    Volume r = resample(v, dims);
    REQUIRE(r.dims == dims);
    for (float x : r.data) REQUIRE(x == 3.25f);
  }
}

TEST_CASE("resample preserves physical extent via spacing") {
  Volume v({16, 16, 16}, {0.5, 0.75, 1.0});
  Volume r = resample(v, {8, 4, 16});
  REQUIRE(r.spacing[0] == Catch::Approx(1.0));
  REQUIRE(r.spacing[1] == Catch::Approx(3.0));
  REQUIRE(r.spacing[2] == Catch::Approx(1.0));
}

TEST_CASE("downsampled linear ramp matches closed-form interpolation") {
  // Ramp along axis 0; the independent oracle evaluates the same linear
  // field at the mapped (and border-clamped) source coordinate.
  const int n = 16;
  Volume v = Volume::cube(n);
  for (int k = 0; k < n; ++k)
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i) v.at(i, j, k) = 2.0f * float(i) + 1.0f;

  Volume r = resample(v, {n / 2, n, n});
  for (int i = 0; i < n / 2; ++i) {
    double x = (i + 0.5) * 2.0 - 0.5;
    double clamped = std::clamp(x, 0.0, double(n - 1));
    double expected = 2.0 * clamped + 1.0;
    REQUIRE(double(r.at(i, 4, 9)) == Catch::Approx(expected).margin(1e-5));
  }
}

TEST_CASE("normalize_intensity yields zero mean and unit std") {
  Volume v = random_volume({10, 11, 12}, 17, -20.0f, 300.0f);
  Volume z = normalize_intensity(v);
  double sum = 0, ss = 0;
  for (float x : z.data) sum += x;
  double mean = sum / double(z.size());
  for (float x : z.data) ss += (x - mean) * (x - mean);
  double stdev = std::sqrt(ss / double(z.size()));
  REQUIRE(std::abs(mean) <= 1e-6);
  REQUIRE(std::abs(stdev - 1.0) <= 1e-6);
}

TEST_CASE("normalize_intensity maps constant input to zeros") {
  Volume v({4, 4, 4}, {1, 1, 1}, 42.0f);
  Volume z = normalize_intensity(v);
  for (float x : z.data) REQUIRE(x == 0.0f);
}

TEST_CASE("normalize_intensity is invariant to positive affine rescaling") {
  Volume v = random_volume({8, 8, 8}, 23);
  Volume w = v;
  for (auto& x : w.data) x = 3.5f * x + 120.0f;
  Volume za = normalize_intensity(v), zb = normalize_intensity(w);
  for (std::size_t i = 0; i < za.size(); ++i)
    REQUIRE(double(za.data[i]) == Catch::Approx(double(zb.data[i])).margin(1e-5));
}

TEST_CASE("crop extracts the requested window") {
  Volume v = random_volume({10, 10, 10}, 31);
  Volume c = crop(v, {2, 3, 4}, {5, 4, 3});
  REQUIRE(c.dims == std::array<int, 3>{5, 4, 3});
  for (int k = 0; k < 3; ++k)
    for (int j = 0; j < 4; ++j)
      for (int i = 0; i < 5; ++i) REQUIRE(c.at(i, j, k) == v.at(2 + i, 3 + j, 4 + k));
  REQUIRE_THROWS_AS(crop(v, {8, 0, 0}, {5, 5, 5}), std::invalid_argument);
  REQUIRE_THROWS_AS(crop(v, {-1, 0, 0}, {5, 5, 5}), std::invalid_argument);
}

TEST_CASE("volume construction validates dimensions and spacing") {
  REQUIRE_THROWS_AS(Volume({0, 4, 4}, {1, 1, 1}), std::invalid_argument);
  REQUIRE_THROWS_AS(Volume({4, 4, 4}, {1, 0, 1}), std::invalid_argument);
  REQUIRE_THROWS_AS(Volume({4, 4, 4}, {1, 1, -2}), std::invalid_argument);
}

TEST_CASE("trilinear_sample clamps outside the grid") {
  Volume v = Volume::cube(4);
  for (int k = 0; k < 4; ++k)
    for (int j = 0; j < 4; ++j)
      for (int i = 0; i < 4; ++i) v.at(i, j, k) = float(i);
  REQUIRE(trilinear_sample(v, -5.0, 1.0, 1.0) == 0.0f);
  REQUIRE(trilinear_sample(v, 9.0, 1.0, 1.0) == 3.0f);
  REQUIRE(trilinear_sample(v, 1.5, 0.0, 0.0) == Catch::Approx(1.5));
}
