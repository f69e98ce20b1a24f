#pragma once

// Gaussian centroid models of the two sinus regions and stochastic cubic
// patch extraction: crop -> flip (right side only) -> resample to 64^3 ->
// z-score normalize.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "paranasal/core.hpp"
#include "paranasal/volume.hpp"

namespace paranasal {

// One manually annotated region centroid, in voxel coordinates of the
// registered 128^3 space.
struct CentroidAnnotation {
  std::string subject_id;
  Side side = Side::left;
  std::array<double, 3> centroid{};
};

// Per-side, per-axis univariate Gaussians: six (mu, sigma) pairs total.
struct SideGaussians {
  std::array<double, 3> mean{};
  std::array<double, 3> stddev{};
};

struct CentroidModel {
  SideGaussians left;
  SideGaussians right;

  const SideGaussians& side(Side s) const { return s == Side::left ? left : right; }
  SideGaussians& side(Side s) { return s == Side::left ? left : right; }
};

// One extracted sub-volume plus its provenance. `centroid` is the sampled
// (pre-clamp) location; `data` is always 64^3, right sides already flipped.
struct Instance {
  std::string subject_id;
  Side side = Side::left;
  std::array<double, 3> centroid{};
  int patch_size = 0;
  Volume data = Volume::cube(1);
  std::optional<Label> label;
};

inline constexpr int instance_edge = 64;

namespace detail {

inline void check_annotation(const CentroidAnnotation& a) {
  for (double c : a.centroid)
    if (!(c >= 0.0 && c <= 127.0))
      throw std::invalid_argument("annotation centroid outside [0,127]: subject '" +
                                  a.subject_id + "'");
}

}  // namespace detail

inline void save_annotations(const std::vector<CentroidAnnotation>& annotations,
                             const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot open for writing: " + path.string());
  out << "subject_id\tside\tx\ty\tz\n";
  out.precision(17);
  for (const auto& a : annotations)
    out << a.subject_id << '\t' << to_string(a.side) << '\t' << a.centroid[0] << '\t'
        << a.centroid[1] << '\t' << a.centroid[2] << '\n';
  if (!out) throw io_error("failed writing: " + path.string());
}

inline std::vector<CentroidAnnotation> load_annotations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open: " + path.string());
  std::vector<CentroidAnnotation> out;
  std::string line;
  while (std::getline(in, line)) {
    auto fields = split_fields(line);
    if (fields.empty() || fields[0].starts_with("#") || fields[0] == "subject_id") continue;
    if (fields.size() != 5)
      throw format_error("annotation row needs 5 fields, got " +
                         std::to_string(fields.size()) + ": '" + line + "'");
    CentroidAnnotation a;
    a.subject_id = fields[0];
    a.side = side_from_string(fields[1]);
    for (int i = 0; i < 3; ++i) a.centroid[i] = std::stod(fields[2 + i]);
    detail::check_annotation(a);
    out.push_back(std::move(a));
  }
  return out;
}

inline void save_centroid_model(const CentroidModel& m, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot open for writing: " + path.string());
  out << "side\tmean_x\tmean_y\tmean_z\tstd_x\tstd_y\tstd_z\n";
  out.precision(17);
  for (Side s : {Side::left, Side::right}) {
    const auto& g = m.side(s);
    out << to_string(s);
    for (double v : g.mean) out << '\t' << v;
    for (double v : g.stddev) out << '\t' << v;
    out << '\n';
  }
  if (!out) throw io_error("failed writing: " + path.string());
}

inline CentroidModel load_centroid_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open: " + path.string());
  CentroidModel m;
  std::array<bool, 2> seen{false, false};
  std::string line;
  while (std::getline(in, line)) {
    auto fields = split_fields(line);
    if (fields.empty() || fields[0].starts_with("#") || fields[0] == "side") continue;
    if (fields.size() != 7)
      throw format_error("centroid model row needs 7 fields: '" + line + "'");
    Side s = side_from_string(fields[0]);
    auto& g = m.side(s);
    for (int i = 0; i < 3; ++i) g.mean[i] = std::stod(fields[1 + i]);
    for (int i = 0; i < 3; ++i) {
      g.stddev[i] = std::stod(fields[4 + i]);
      if (g.stddev[i] < 0) throw format_error("negative spread in centroid model");
    }
    seen[std::size_t(s)] = true;
  }
  if (!seen[0] || !seen[1]) throw format_error("centroid model must cover both sides");
  return m;
}

// Per-side, per-axis sample mean and unbiased (n-1) standard deviation.
// Requires at least two annotations on each side.
inline CentroidModel fit_centroid_model(const std::vector<CentroidAnnotation>& annotations) {
  CentroidModel m;
  for (Side s : {Side::left, Side::right}) {
    std::vector<const CentroidAnnotation*> rows;
    for (const auto& a : annotations) {
      detail::check_annotation(a);
      if (a.side == s) rows.push_back(&a);
    }
    if (rows.size() < 2)
      throw std::invalid_argument(std::string("need at least 2 annotations for side ") +
                                  to_string(s) + ", got " + std::to_string(rows.size()));
    auto& g = m.side(s);
    for (int axis = 0; axis < 3; ++axis) {
      double sum = 0.0;
      for (const auto* a : rows) sum += a->centroid[axis];
      double mean = sum / double(rows.size());
      double sq = 0.0;
      for (const auto* a : rows) {
        double d = a->centroid[axis] - mean;
        sq += d * d;
      }
      g.mean[axis] = mean;
      g.stddev[axis] = std::sqrt(sq / double(rows.size() - 1));
    }
  }
  return m;
}

// n independent draws; each axis from its own univariate Gaussian.
// Deterministic given the seed. sigma == 0 gives exactly mu on that axis.
inline std::vector<std::array<double, 3>> sample_centroids(const CentroidModel& m, Side side,
                                                           int n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("sample count must be >= 1");
  const SideGaussians& g = m.side(side);
  Rng rng(seed);
  std::vector<std::array<double, 3>> out(static_cast<std::size_t>(n));
  for (auto& c : out)
    for (int axis = 0; axis < 3; ++axis) c[axis] = rng.normal(g.mean[axis], g.stddev[axis]);
  return out;
}

// Start index of the axis-aligned window of length `p` centered on `c`,
// clamped so the window lies fully inside [0, dim). The window's continuous
// center lo + (p-1)/2 is the admissible one nearest c (exact half-ties go to
// the larger start). Rounding c - (p-1)/2 rather than c keeps the mapping
// mirror-equivariant for even p as well.
inline int crop_window_start(double c, int p, int dim) {
  if (p < 1 || p > dim) throw std::invalid_argument("patch size must be in [1, dim]");
  long long lo = std::llround(c - 0.5 * double(p - 1));
  if (lo < 0) lo = 0;
  if (lo > dim - p) lo = dim - p;
  return int(lo);
}

inline std::array<int, 3> crop_window(const std::array<double, 3>& c, int p,
                                      const std::array<int, 3>& dims) {
  return {crop_window_start(c[0], p, dims[0]), crop_window_start(c[1], p, dims[1]),
          crop_window_start(c[2], p, dims[2])};
}

struct ExtractOptions {
  // Replace stochastic draws with the model means (one draw per side).
  bool deterministic_mean = false;
  // Skip z-scoring; raw-intensity instances are useful for threshold probes.
  bool normalize = true;
};

inline Instance extract_instance(const Volume& v, const std::string& subject_id,
                                 const std::array<double, 3>& centroid, int p, Side side,
                                 bool normalize = true) {
  if (!(v.dims[0] == v.dims[1] && v.dims[1] == v.dims[2]))
    throw std::invalid_argument("extraction requires a cubic volume");
  if (p > v.dims[0]) throw std::invalid_argument("patch size exceeds volume edge");
  std::array<int, 3> lo = crop_window(centroid, p, v.dims);
  Volume patch = crop(v, lo, {p, p, p});
  if (side == Side::right) patch = flip_lr(patch);
  patch = resample(patch, {instance_edge, instance_edge, instance_edge});
  if (normalize) patch = normalize_intensity(patch);
  Instance inst;
  inst.subject_id = subject_id;
  inst.side = side;
  inst.centroid = centroid;
  inst.patch_size = p;
  inst.data = std::move(patch);
  return inst;
}

// Seed for the draw stream of one (subject, side). Independent of
// evaluation order, so per-subject extraction can run in any order.
inline std::uint64_t side_stream_seed(std::uint64_t seed, const std::string& subject_id,
                                      Side side) {
  return Rng(seed).derive(subject_id).derive(to_string(side)).seed();
}

// n left then n right instances, each side drawn from its own stream.
inline std::vector<Instance> extract_all(const Volume& v, const CentroidModel& m,
                                         const std::string& subject_id, int n, int p,
                                         std::uint64_t seed, ExtractOptions opts = {}) {
  std::vector<Instance> out;
  out.reserve(std::size_t(2 * n));
  for (Side side : {Side::left, Side::right}) {
    std::vector<std::array<double, 3>> centroids;
    if (opts.deterministic_mean)
      centroids.assign(std::size_t(n), m.side(side).mean);
    else
      centroids = sample_centroids(m, side, n, side_stream_seed(seed, subject_id, side));
    for (const auto& c : centroids)
      out.push_back(extract_instance(v, subject_id, c, p, side, opts.normalize));
  }
  return out;
}

}  // namespace paranasal
