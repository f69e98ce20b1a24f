#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdlib>

#include "paranasal/sampling.hpp"
#include "support.hpp"

using namespace paranasal;
using testsupport::TempDir;

namespace {

std::vector<CentroidAnnotation> two_point_annotations() {
  return {
      {"s1", Side::left, {10, 20, 30}},
      {"s2", Side::left, {14, 20, 30}},
      {"s1", Side::right, {100, 20, 30}},
      {"s2", Side::right, {104, 24, 30}},
  };
}

// Independent window oracle: scan every admissible start index and keep the
// one whose continuous window center lies nearest c. Scanning downward with
// a strict comparison resolves exact half-ties toward the larger start.
int brute_force_window_start(double c, int p, int dim) {
  double h = 0.5 * double(p - 1);
  int best = dim - p;
  double best_d = 1e300;
  for (int lo = dim - p; lo >= 0; --lo) {
    double d = std::abs(double(lo) + h - c);
    if (d < best_d) {
      best_d = d;
      best = lo;
    }
  }
  return best;
}

// 128^3 volume exactly mirror-symmetric about the sagittal midplane
// (axis 0), with enough structure to make crops distinctive.
Volume mirror_volume() {
  Volume v = Volume::cube(128);
  for (int k = 0; k < 128; ++k)
    for (int j = 0; j < 128; ++j)
      for (int i = 0; i < 128; ++i) {
        double m = std::abs(i - 63.5);
        double val = 10.0 * std::sin(0.11 * m) + 0.3 * j + 0.17 * k +
                     25.0 * std::exp(-0.002 * ((m - 24) * (m - 24) + (j - 70) * (j - 70) +
                                               (k - 60) * (k - 60)));
        v.at(i, j, k) = float(val);
      }
  return v;
}

}  // namespace

TEST_CASE("centroid model fit matches two-point closed forms") {
  CentroidModel m = fit_centroid_model(two_point_annotations());
  REQUIRE(m.left.mean[0] == Catch::Approx(12.0).margin(1e-12));
  REQUIRE(m.left.mean[1] == Catch::Approx(20.0).margin(1e-12));
  REQUIRE(m.left.mean[2] == Catch::Approx(30.0).margin(1e-12));
  REQUIRE(m.left.stddev[0] == Catch::Approx(2.0 * std::sqrt(2.0)).margin(1e-9));
  REQUIRE(m.left.stddev[1] == Catch::Approx(0.0).margin(1e-12));
  REQUIRE(m.left.stddev[2] == Catch::Approx(0.0).margin(1e-12));
  REQUIRE(m.right.mean[0] == Catch::Approx(102.0).margin(1e-12));
  REQUIRE(m.right.stddev[1] == Catch::Approx(2.0 * std::sqrt(2.0)).margin(1e-9));
}

TEST_CASE("identical annotations give zero spread") {
  std::vector<CentroidAnnotation> ann;
  for (int i = 0; i < 5; ++i) {
    ann.push_back({"s" + std::to_string(i), Side::left, {40, 60, 70}});
    ann.push_back({"s" + std::to_string(i), Side::right, {90, 60, 70}});
  }
  CentroidModel m = fit_centroid_model(ann);
  for (int a = 0; a < 3; ++a) {
    REQUIRE(m.left.stddev[a] == 0.0);
    REQUIRE(m.right.stddev[a] == 0.0);
  }
}

TEST_CASE("model fit rejects degenerate inputs") {
  auto ann = two_point_annotations();
  ann.pop_back();
  REQUIRE_THROWS_AS(fit_centroid_model(ann), std::invalid_argument);
  auto bad = two_point_annotations();
  bad[0].centroid[2] = 127.5;
  REQUIRE_THROWS_AS(fit_centroid_model(bad), std::invalid_argument);
}

TEST_CASE("zero-spread model draws exactly the mean") {
  CentroidModel m;
  m.left = {{41.25, 63.5, 70.75}, {0, 0, 0}};
  m.right = m.left;
  auto draws = sample_centroids(m, Side::left, 7, 123);
  REQUIRE(draws.size() == 7);
  for (const auto& c : draws)
    for (int a = 0; a < 3; ++a) REQUIRE(c[a] == m.left.mean[a]);
}

TEST_CASE("centroid draws are deterministic in the seed") {
  CentroidModel m;
  m.left = {{40, 64, 70}, {3, 5, 2}};
  m.right = {{88, 64, 70}, {3, 5, 2}};
  auto a = sample_centroids(m, Side::left, 10, 999);
  auto b = sample_centroids(m, Side::left, 10, 999);
  REQUIRE(a == b);
  auto c = sample_centroids(m, Side::left, 10, 1000);
  REQUIRE(a != c);
}

TEST_CASE("draw means obey the central-limit bound") {
  CentroidModel m;
  m.left = {{60, 64, 70}, {3, 5, 2}};
  m.right = m.left;
  const int n = 10000;
  auto draws = sample_centroids(m, Side::left, n, 20240817);
  for (int axis = 0; axis < 3; ++axis) {
    double sum = 0;
    for (const auto& c : draws) sum += c[axis];
    double mean = sum / n;
    double bound = 4.0 * m.left.stddev[axis] / std::sqrt(double(n));
    REQUIRE(std::abs(mean - m.left.mean[axis]) <= bound);
  }
}

TEST_CASE("crop windows agree with the brute-force oracle") {
  Rng rng(77);
  const int dim = 128;
  for (int trial = 0; trial < 1000; ++trial) {
    double c = rng.uniform(-20.0, 148.0);
    int p = supported_patch_sizes[std::size_t(rng.uniform_index(supported_patch_sizes.size()))];
    int got = crop_window_start(c, p, dim);
    REQUIRE(got == brute_force_window_start(c, p, dim));
    REQUIRE(got >= 0);
    REQUIRE(got + p <= dim);
  }
}

TEST_CASE("crop window corner cases") {
  REQUIRE(crop_window({0, 0, 0}, 25, {128, 128, 128}) == std::array<int, 3>{0, 0, 0});
  REQUIRE(crop_window({63.5, 63.5, 63.5}, 128, {128, 128, 128}) == std::array<int, 3>{0, 0, 0});
  REQUIRE(crop_window({127, 127, 127}, 25, {128, 128, 128}) ==
          std::array<int, 3>{103, 103, 103});
  REQUIRE_THROWS_AS(crop_window_start(10.0, 129, 128), std::invalid_argument);
}

TEST_CASE("sampled windows always lie inside the volume") {
  CentroidModel m;
  m.left = {{64, 64, 64}, {50, 50, 50}};
  m.right = m.left;
  auto draws = sample_centroids(m, Side::left, 2000, 5);
  for (const auto& c : draws) {
    auto lo = crop_window(c, 45, {128, 128, 128});
    for (int a = 0; a < 3; ++a) {
      REQUIRE(lo[a] >= 0);
      REQUIRE(lo[a] + 45 <= 128);
    }
  }
}

TEST_CASE("full-volume patch reduces to plain resampling") {
  Volume v = testsupport::random_volume({128, 128, 128}, 11);
  Instance inst = extract_instance(v, "s", {63.5, 63.5, 63.5}, 128, Side::left);
  Volume expect = normalize_intensity(resample(v, {64, 64, 64}));
  REQUIRE(inst.data.dims == expect.dims);
  REQUIRE(inst.data.data == expect.data);
}

TEST_CASE("mirrored extraction from a mirror-symmetric volume matches") {
  Volume v = mirror_volume();
  std::array<double, 3> left_c{40.2, 70.5, 60.3};
  std::array<double, 3> right_c{127.0 - left_c[0], left_c[1], left_c[2]};
  for (int p : {25, 30, 45}) {
    Instance li = extract_instance(v, "s", left_c, p, Side::left);
    Instance ri = extract_instance(v, "s", right_c, p, Side::right);
    REQUIRE(li.data.dims == ri.data.dims);
    double worst = 0;
    for (std::size_t i = 0; i < li.data.data.size(); ++i)
      worst = std::max(worst, std::abs(double(li.data.data[i]) - double(ri.data.data[i])));
    REQUIRE(worst <= 1e-4);
  }
}

TEST_CASE("re-flipping a right instance recovers the unflipped pipeline") {
  Volume v = testsupport::random_volume({128, 128, 128}, 3, 0.0f, 50.0f);
  std::array<double, 3> c{80.0, 60.0, 55.0};
  Instance ri = extract_instance(v, "s", c, 35, Side::right);
  Instance li = extract_instance(v, "s", c, 35, Side::left);
  Volume back = flip_lr(ri.data);
  double worst = 0;
  for (std::size_t i = 0; i < back.data.size(); ++i)
    worst = std::max(worst, std::abs(double(back.data[i]) - double(li.data.data[i])));
  REQUIRE(worst <= 1e-5);
}

TEST_CASE("instances carry 64-cubed z-scored data") {
  Volume v = testsupport::random_volume({128, 128, 128}, 21, 10.0f, 90.0f);
  Instance inst = extract_instance(v, "s", {30.0, 64.0, 64.0}, 25, Side::left);
  REQUIRE(inst.data.dims == std::array<int, 3>{64, 64, 64});
  double sum = 0, sq = 0;
  for (float x : inst.data.data) {
    sum += x;
    sq += double(x) * x;
  }
  double n = double(inst.data.data.size());
  REQUIRE(std::abs(sum / n) <= 1e-5);
  REQUIRE(std::sqrt(sq / n - (sum / n) * (sum / n)) == Catch::Approx(1.0).margin(1e-4));
}

TEST_CASE("extract_all yields n per side with per-side streams") {
  Volume v = testsupport::random_volume({128, 128, 128}, 8, 0.0f, 100.0f);
  CentroidModel m;
  m.left = {{40, 64, 64}, {2, 2, 2}};
  m.right = {{88, 64, 64}, {2, 2, 2}};

  auto one = extract_all(v, m, "sub-01", 1, 25, 42);
  REQUIRE(one.size() == 2);
  REQUIRE(one[0].side == Side::left);
  REQUIRE(one[1].side == Side::right);

  auto many = extract_all(v, m, "sub-01", 15, 25, 42);
  REQUIRE(many.size() == 30);
  for (int i = 0; i < 15; ++i) REQUIRE(many[std::size_t(i)].side == Side::left);
  for (int i = 15; i < 30; ++i) REQUIRE(many[std::size_t(i)].side == Side::right);
  for (const auto& inst : many) {
    REQUIRE(inst.subject_id == "sub-01");
    REQUIRE(inst.patch_size == 25);
  }

  auto again = extract_all(v, m, "sub-01", 15, 25, 42);
  for (std::size_t i = 0; i < many.size(); ++i) {
    REQUIRE(again[i].centroid == many[i].centroid);
    REQUIRE(again[i].data.data == many[i].data.data);
  }

  auto other = extract_all(v, m, "sub-02", 15, 25, 42);
  REQUIRE(other[0].centroid != many[0].centroid);
}

TEST_CASE("deterministic-mean extraction ignores the seed") {
  Volume v = testsupport::random_volume({128, 128, 128}, 8, 0.0f, 100.0f);
  CentroidModel m;
  m.left = {{40, 64, 64}, {4, 4, 4}};
  m.right = {{88, 64, 64}, {4, 4, 4}};
  ExtractOptions opts;
  opts.deterministic_mean = true;
  auto a = extract_all(v, m, "s", 2, 25, 1, opts);
  auto b = extract_all(v, m, "s", 2, 25, 999, opts);
  REQUIRE(a.size() == 4);
  for (std::size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i].centroid == m.side(a[i].side).mean);
    REQUIRE(a[i].data.data == b[i].data.data);
  }
}

TEST_CASE("annotation tables round-trip") {
  TempDir dir("ann");
  auto ann = two_point_annotations();
  save_annotations(ann, dir.file("c.tsv"));
  auto back = load_annotations(dir.file("c.tsv"));
  REQUIRE(back.size() == ann.size());
  for (std::size_t i = 0; i < ann.size(); ++i) {
    REQUIRE(back[i].subject_id == ann[i].subject_id);
    REQUIRE(back[i].side == ann[i].side);
    REQUIRE(back[i].centroid == ann[i].centroid);
  }
}

TEST_CASE("annotation loading rejects malformed tables") {
  TempDir dir("annbad");
  REQUIRE_THROWS_AS(load_annotations(dir.file("absent.tsv")), io_error);
  {
    std::ofstream out(dir.file("short.tsv"));
    out << "s1\tleft\t1\t2\n";
  }
  REQUIRE_THROWS_AS(load_annotations(dir.file("short.tsv")), format_error);
  {
    std::ofstream out(dir.file("side.tsv"));
    out << "s1\tmiddle\t1\t2\t3\n";
  }
  REQUIRE_THROWS_AS(load_annotations(dir.file("side.tsv")), format_error);
  {
    std::ofstream out(dir.file("range.tsv"));
    out << "s1\tleft\t1\t2\t200\n";
  }
  REQUIRE_THROWS_AS(load_annotations(dir.file("range.tsv")), std::invalid_argument);
}
