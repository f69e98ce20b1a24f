#pragma once

// Synthetic head-like volumes with two air cavities, optional bright
// lesions, optional bright clutter outside the cavities, and recorded
// rigid perturbations. Every pipeline stage gets ground truth from here.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "paranasal/core.hpp"
#include "paranasal/manifest.hpp"
#include "paranasal/nifti.hpp"
#include "paranasal/sampling.hpp"
#include "paranasal/transform.hpp"
#include "paranasal/volume.hpp"

namespace paranasal {

struct PhantomSpec {
  int cohort = 20;
  int edge = 128;  // cubic volume side length

  // Nominal cavity centroids (axis 0 is left-right) and their per-axis
  // inter-subject jitter.
  std::array<double, 3> left_center{44, 70, 62};
  std::array<double, 3> right_center{84, 70, 62};
  double centroid_jitter = 2.5;

  double cavity_radius_min = 10.0;
  double cavity_radius_max = 13.0;

  double lesion_probability = 0.32;  // per side
  double lesion_radius_min = 3.0;
  double lesion_radius_max = 4.5;
  // 0 places lesion centers uniformly in the cavity; 1 pushes them toward
  // the cavity border, so small crops around a sampled centroid can miss.
  double lesion_edge_affinity = 0.0;

  // Bright clutter spheres outside the cavities, at lesion intensity.
  // Large crops pick them up; zero disables.
  int confuser_count = 0;
  double confuser_distance_min = 18.0;
  double confuser_distance_max = 27.0;
  double confuser_radius_min = 2.5;
  double confuser_radius_max = 4.0;

  double background_level = 0.0;
  double cavity_level = 25.0;
  double tissue_level = 90.0;
  double shell_level = 140.0;
  double lesion_level = 190.0;
  double noise_std = 4.0;

  // Per-subject rigid perturbation, uniform in +-range.
  double max_rotation_deg = 10.0;
  double max_translation = 10.0;
  bool perturb = true;

  int annotated = 20;              // leading subjects that emit annotations
  double exclusion_probability = 0.0;  // per-side sinus exclusion
  std::uint64_t seed = 1;

  void validate() const {
    if (cohort < 1) throw std::invalid_argument("phantom cohort must be >= 1");
    if (edge < 32) throw std::invalid_argument("phantom edge must be >= 32");
    if (!(cavity_radius_min > 0 && cavity_radius_max >= cavity_radius_min))
      throw std::invalid_argument("bad cavity radius range");
    if (!(lesion_radius_min > 0 && lesion_radius_max >= lesion_radius_min))
      throw std::invalid_argument("bad lesion radius range");
    if (lesion_radius_max > cavity_radius_min)
      throw std::invalid_argument("lesion must fit inside the smallest cavity");
    if (!(lesion_probability >= 0 && lesion_probability <= 1))
      throw std::invalid_argument("lesion probability outside [0,1]");
    if (!(lesion_edge_affinity >= 0 && lesion_edge_affinity <= 1))
      throw std::invalid_argument("lesion edge affinity outside [0,1]");
    for (const auto& c : {left_center, right_center})
      for (int a = 0; a < 3; ++a) {
        double reach = 3.0 * centroid_jitter + cavity_radius_max;
        if (c[a] - reach < 1.0 || c[a] + reach > double(edge) - 1.0)
          throw std::invalid_argument("cavity can leave the volume at 3-sigma jitter");
      }
    // Structural intensities must be separated well clear of the noise.
    std::array<double, 5> levels{background_level, cavity_level, tissue_level, shell_level,
                                 lesion_level};
    for (std::size_t i = 0; i < levels.size(); ++i)
      for (std::size_t j = i + 1; j < levels.size(); ++j)
        if (std::abs(levels[i] - levels[j]) < 5.0 * noise_std)
          throw std::invalid_argument("intensity levels closer than 5x noise std");
  }
};

struct SinusTruth {
  bool included = true;
  Label label = Label::normal;
  std::array<double, 3> centroid{};  // cavity center, registered space
  double cavity_radius = 0;
  bool has_lesion = false;
  std::array<double, 3> lesion_center{};
  double lesion_radius = 0;
};

struct SubjectTruth {
  std::string subject_id;
  RigidTransform perturbation = RigidTransform::identity();
  std::array<SinusTruth, 2> sinuses{};  // indexed by Side

  SinusTruth& sinus(Side s) { return sinuses[std::size_t(s)]; }
  const SinusTruth& sinus(Side s) const { return sinuses[std::size_t(s)]; }
};

struct PhantomSubject {
  SubjectTruth truth;
  Volume registered = Volume::cube(1);  // unperturbed anatomy + noise
  Volume raw = Volume::cube(1);         // perturbed anatomy + noise
};

inline std::string phantom_subject_id(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "sub-%03d", index);
  return buf;
}

namespace detail {

inline double smooth_inside(double signed_dist, double edge_width) {
  // 1 well inside (negative distance), 0 well outside, smoothstep between.
  double t = (edge_width - signed_dist) / (2.0 * edge_width);
  if (t <= 0) return 0;
  if (t >= 1) return 1;
  return t * t * (3 - 2 * t);
}

inline double sphere_signed_dist(double x, double y, double z,
                                 const std::array<double, 3>& c, double r) {
  double dx = x - c[0], dy = y - c[1], dz = z - c[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz) - r;
}

// Signed distance to an axis-aligned ellipsoid boundary, approximated by
// scaling the normalized radial excess with the mean semi-axis.
inline double ellipsoid_signed_dist(double x, double y, double z,
                                    const std::array<double, 3>& c,
                                    const std::array<double, 3>& semi) {
  double nx = (x - c[0]) / semi[0], ny = (y - c[1]) / semi[1], nz = (z - c[2]) / semi[2];
  double rho = std::sqrt(nx * nx + ny * ny + nz * nz);
  double mean_semi = (semi[0] + semi[1] + semi[2]) / 3.0;
  return (rho - 1.0) * mean_semi;
}

inline std::array<double, 3> random_unit_vector(Rng& rng) {
  while (true) {
    double x = rng.normal(), y = rng.normal(), z = rng.normal();
    double n = std::sqrt(x * x + y * y + z * z);
    if (n > 1e-6) return {x / n, y / n, z / n};
  }
}

struct BrightSphere {
  std::array<double, 3> center{};
  double radius = 0;
};

}  // namespace detail

// Geometry and labels only; cheap enough for cohort-level statistics.
// Deterministic given (spec, index), independent of painting.
inline SubjectTruth generate_truth(const PhantomSpec& spec, int index) {
  spec.validate();
  if (index < 0 || index >= spec.cohort) throw std::invalid_argument("subject index out of range");

  SubjectTruth truth;
  truth.subject_id = phantom_subject_id(index);
  Rng root(spec.seed);
  Rng sub = root.derive(truth.subject_id);

  Rng anatomy = sub.derive("anatomy");
  for (Side side : {Side::left, Side::right}) {
    auto& sinus = truth.sinus(side);
    const auto& nominal = side == Side::left ? spec.left_center : spec.right_center;
    for (int a = 0; a < 3; ++a) {
      double c = anatomy.normal(nominal[a], spec.centroid_jitter);
      double reach = 3.0 * spec.centroid_jitter;
      c = std::min(std::max(c, nominal[a] - reach), nominal[a] + reach);
      sinus.centroid[a] = c;
    }
    sinus.cavity_radius = anatomy.uniform(spec.cavity_radius_min, spec.cavity_radius_max);
  }
  Rng exclude = sub.derive("exclude");
  for (Side side : {Side::left, Side::right})
    truth.sinus(side).included = exclude.uniform() >= spec.exclusion_probability;

  for (Side side : {Side::left, Side::right}) {
    auto& sinus = truth.sinus(side);
    Rng lesion = sub.derive(std::string("lesion-") + to_string(side));
    sinus.has_lesion = lesion.uniform() < spec.lesion_probability;
    sinus.label = sinus.has_lesion ? Label::anomaly : Label::normal;
    if (sinus.has_lesion) {
      sinus.lesion_radius = lesion.uniform(spec.lesion_radius_min, spec.lesion_radius_max);
      auto dir = detail::random_unit_vector(lesion);
      double max_offset = sinus.cavity_radius - sinus.lesion_radius;
      // Exponent 1/3 is uniform-in-ball; affinity shrinks it toward the rim.
      double exponent = 1.0 / (3.0 + 6.0 * spec.lesion_edge_affinity);
      double offset = max_offset * std::pow(lesion.uniform(), exponent);
      for (int a = 0; a < 3; ++a) sinus.lesion_center[a] = sinus.centroid[a] + offset * dir[a];
    }
  }

  if (spec.perturb) {
    Rng perturb = sub.derive("perturb");
    for (int a = 0; a < 3; ++a)
      truth.perturbation.rotation_deg[a] =
          perturb.uniform(-spec.max_rotation_deg, spec.max_rotation_deg);
    for (int a = 0; a < 3; ++a)
      truth.perturbation.translation[a] =
          perturb.uniform(-spec.max_translation, spec.max_translation);
  }
  return truth;
}

// Full subject: ellipsoidal shell and tissue, two cavities, optional
// lesions and clutter, noise, and the recorded perturbation applied to
// the raw output.
inline PhantomSubject generate_subject(const PhantomSpec& spec, int index,
                                       bool with_raw = true) {
  PhantomSubject out;
  out.truth = generate_truth(spec, index);
  Rng root(spec.seed);
  Rng sub = root.derive(out.truth.subject_id);

  const double e = double(spec.edge);
  const double scale = e / 128.0;  // geometry defaults are stated for 128
  const std::array<double, 3> head_center{e / 2, e / 2, e / 2};
  // Strongly triaxial on purpose: a near-spherical shell leaves rotation
  // pinned only by the jittered cavities, which drags the NCC optimum a
  // few degrees off the true pose.
  const std::array<double, 3> head_semi{44 * scale, 58 * scale, 50 * scale};
  const std::array<double, 3> inner_semi{40 * scale, 54 * scale, 46 * scale};

  // Fixed off-midline bone landmark, identical across subjects. Real heads
  // are asymmetric; without it the near-spherical anatomy admits a flipped
  // registration optimum and a flat rotation valley.
  const std::array<double, 3> landmark_center{78 * scale, 42 * scale, 92 * scale};
  const double landmark_radius = 5 * scale;

  // Clutter spheres: bright like lesions, outside both cavities, inside
  // the tissue ellipsoid.
  std::vector<detail::BrightSphere> confusers;
  Rng clutter = sub.derive("confusers");
  for (int k = 0; k < spec.confuser_count; ++k) {
    Side side = clutter.uniform() < 0.5 ? Side::left : Side::right;
    const auto& anchor = out.truth.sinus(side).centroid;
    for (int attempt = 0; attempt < 64; ++attempt) {
      detail::BrightSphere s;
      s.radius = clutter.uniform(spec.confuser_radius_min, spec.confuser_radius_max);
      auto dir = detail::random_unit_vector(clutter);
      double dist = clutter.uniform(spec.confuser_distance_min, spec.confuser_distance_max);
      for (int a = 0; a < 3; ++a) s.center[a] = anchor[a] + dist * dir[a];
      bool ok = detail::ellipsoid_signed_dist(s.center[0], s.center[1], s.center[2],
                                              head_center, inner_semi) < -(s.radius + 3.0);
      for (Side other : {Side::left, Side::right}) {
        const auto& sinus = out.truth.sinus(other);
        double d = detail::sphere_signed_dist(s.center[0], s.center[1], s.center[2],
                                              sinus.centroid, sinus.cavity_radius);
        ok = ok && d > s.radius + 2.0;
      }
      if (ok) {
        confusers.push_back(s);
        break;
      }
    }
  }

  // Paint the anatomy.
  const double edge_width = 1.2;
  Volume anatomy_vol(std::array<int, 3>{spec.edge, spec.edge, spec.edge},
                     std::array<double, 3>{1, 1, 1});
  for (int k = 0; k < spec.edge; ++k)
    for (int j = 0; j < spec.edge; ++j)
      for (int i = 0; i < spec.edge; ++i) {
        double x = i, y = j, z = k;
        double v = spec.background_level;
        double w_outer = detail::smooth_inside(
            detail::ellipsoid_signed_dist(x, y, z, head_center, head_semi), edge_width);
        v += (spec.shell_level - v) * w_outer;
        double w_inner = detail::smooth_inside(
            detail::ellipsoid_signed_dist(x, y, z, head_center, inner_semi), edge_width);
        v += (spec.tissue_level - v) * w_inner;
        double w_mark = detail::smooth_inside(
            detail::sphere_signed_dist(x, y, z, landmark_center, landmark_radius),
            edge_width);
        v += (spec.shell_level - v) * w_mark;
        for (Side side : {Side::left, Side::right}) {
          const auto& sinus = out.truth.sinus(side);
          double w_cav = detail::smooth_inside(
              detail::sphere_signed_dist(x, y, z, sinus.centroid, sinus.cavity_radius),
              edge_width);
          v += (spec.cavity_level - v) * w_cav;
          if (sinus.has_lesion) {
            double w_les = detail::smooth_inside(
                detail::sphere_signed_dist(x, y, z, sinus.lesion_center, sinus.lesion_radius),
                edge_width);
            v += (spec.lesion_level - v) * w_les;
          }
        }
        for (const auto& s : confusers) {
          double w = detail::smooth_inside(
              detail::sphere_signed_dist(x, y, z, s.center, s.radius), edge_width);
          v += (spec.lesion_level - v) * w;
        }
        anatomy_vol.at(i, j, k) = float(v);
      }

  auto add_noise = [&](Volume& v, const char* stream) {
    if (spec.noise_std <= 0) return;
    Rng noise = sub.derive(stream);
    for (float& x : v.data) x += float(noise.normal(0.0, spec.noise_std));
  };

  out.registered = anatomy_vol;
  add_noise(out.registered, "noise-registered");
  if (with_raw) {
    out.raw = apply_transform(anatomy_vol, out.truth.perturbation);
    add_noise(out.raw, "noise-raw");
  }
  return out;
}

// Nominal anatomy with no jitter, lesions, clutter, perturbation, or
// noise: the fixed target that raw volumes are registered against.
inline Volume make_reference(const PhantomSpec& spec) {
  PhantomSpec nominal = spec;
  nominal.centroid_jitter = 0;
  nominal.cavity_radius_min = nominal.cavity_radius_max =
      0.5 * (spec.cavity_radius_min + spec.cavity_radius_max);
  nominal.lesion_probability = 0;
  nominal.confuser_count = 0;
  nominal.noise_std = 0;
  nominal.perturb = false;
  nominal.cohort = 1;
  return generate_subject(nominal, 0, false).registered;
}

// Rule-based label from raw (un-normalized) crop intensities: anomaly when
// enough voxels sit above the shell/lesion midpoint. Validates that a crop
// at a given patch size actually contains discriminative content.
inline Label oracle_classify(const Volume& unnormalized_crop, const PhantomSpec& spec,
                             int min_bright_voxels = 20) {
  double threshold = 0.5 * (spec.shell_level + spec.lesion_level);
  int bright = 0;
  for (float x : unnormalized_crop.data)
    if (double(x) >= threshold) ++bright;
  return bright >= min_bright_voxels ? Label::anomaly : Label::normal;
}

inline void save_truth(const std::vector<SubjectTruth>& truths,
                       const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot open for writing: " + path.string());
  out.precision(17);
  out << "# paranasal phantom truth v1\n";
  out << "[transforms]\n";
  out << "subject_id\trot_x\trot_y\trot_z\tt_x\tt_y\tt_z\n";
  for (const auto& t : truths) {
    out << t.subject_id;
    for (double r : t.perturbation.rotation_deg) out << '\t' << r;
    for (double v : t.perturbation.translation) out << '\t' << v;
    out << '\n';
  }
  out << "[sinuses]\n";
  out << "subject_id\tside\tincluded\tlabel\tc_x\tc_y\tc_z\tcavity_r\thas_lesion\tlesion_r\tl_x\tl_y\tl_z\n";
  for (const auto& t : truths)
    for (Side side : {Side::left, Side::right}) {
      const auto& s = t.sinus(side);
      out << t.subject_id << '\t' << to_string(side) << '\t' << int(s.included) << '\t'
          << to_string(s.label) << '\t' << s.centroid[0] << '\t' << s.centroid[1] << '\t'
          << s.centroid[2] << '\t' << s.cavity_radius << '\t' << int(s.has_lesion) << '\t'
          << s.lesion_radius << '\t' << s.lesion_center[0] << '\t' << s.lesion_center[1]
          << '\t' << s.lesion_center[2] << '\n';
    }
  if (!out) throw io_error("failed writing: " + path.string());
}

struct CohortOutput {
  Manifest manifest;
  std::vector<SubjectTruth> truths;
  std::vector<CentroidAnnotation> annotations;
};

// Writes reference.nii.gz, raw/<id>.nii.gz, registered/<id>.nii.gz,
// manifest.tsv, annotations.tsv, and truth.tsv under `dir`. Volumes are
// generated one subject at a time, so memory stays flat.
inline CohortOutput write_cohort(const PhantomSpec& spec, const std::filesystem::path& dir) {
  spec.validate();
  namespace fs = std::filesystem;
  fs::create_directories(dir / "raw");
  fs::create_directories(dir / "registered");
  save_volume(make_reference(spec), dir / "reference.nii.gz");

  CohortOutput out;
  for (int i = 0; i < spec.cohort; ++i) {
    PhantomSubject subject = generate_subject(spec, i);
    const std::string& id = subject.truth.subject_id;
    std::string raw_rel = "raw/" + id + ".nii.gz";
    std::string reg_rel = "registered/" + id + ".nii.gz";
    save_volume(subject.raw, dir / raw_rel);
    save_volume(subject.registered, dir / reg_rel);

    SubjectRecord rec;
    rec.subject_id = id;
    rec.source_path = raw_rel;
    rec.registered_path = reg_rel;
    for (Side side : {Side::left, Side::right}) {
      const auto& sinus = subject.truth.sinus(side);
      rec.side(side).included = sinus.included;
      rec.side(side).label = sinus.label;
    }
    out.manifest.subjects.push_back(std::move(rec));
    if (i < spec.annotated)
      for (Side side : {Side::left, Side::right}) {
        const auto& sinus = subject.truth.sinus(side);
        if (sinus.included) out.annotations.push_back({id, side, sinus.centroid});
      }
    out.truths.push_back(subject.truth);
  }

  save_manifest(out.manifest, dir / "manifest.tsv");
  save_annotations(out.annotations, dir / "annotations.tsv");
  save_truth(out.truths, dir / "truth.tsv");
  return out;
}

}  // namespace paranasal
