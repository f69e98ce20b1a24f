#ifndef PARANASAL_REGISTRATION_HPP
#define PARANASAL_REGISTRATION_HPP

#include <array>
#include <cmath>
#include <vector>

#include "paranasal/transform.hpp"
#include "paranasal/volume.hpp"

namespace paranasal {

// Normalized cross-correlation of two same-sized grids, in [-1, 1].
// Returns 0 when either grid is constant.
inline double ncc(const Volume& a, const Volume& b) {
  if (a.dims != b.dims) throw std::invalid_argument("ncc: dimension mismatch");
  const std::size_t n = a.size();
  double sa = 0, sb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sa += a.data[i];
    sb += b.data[i];
  }
  double ma = sa / double(n), mb = sb / double(n);
  double saa = 0, sbb = 0, sab = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double da = a.data[i] - ma, db = b.data[i] - mb;
    saa += da * da;
    sbb += db * db;
    sab += da * db;
  }
  if (saa <= 0 || sbb <= 0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

struct RegistrationOptions {
  // Coarse-to-fine downsampling factors.
  std::vector<int> pyramid{4, 2, 1};
  // Sweep budget per pyramid level. One sweep probes every parameter once.
  int max_iterations_per_level = 200;
  // Initial probe steps at the coarsest level, halved on stagnation.
  double initial_rotation_step_deg = 4.0;
  double initial_translation_step = 4.0;
  // A level converges once both steps fall below these.
  double rotation_tolerance_deg = 0.02;
  double translation_tolerance = 0.02;
  // Capture range around the identity pose. Candidates outside are never
  // accepted, which keeps the search away from symmetry twins (a head is
  // never half a turn from its reference in practice).
  double max_rotation_deg = 25.0;
  double max_translation = 30.0;
};

struct RegistrationResult {
  RigidTransform transform;
  Volume warped;        // moving resampled onto the fixed grid
  bool converged = false;
  double ncc_before = 0.0;
  double ncc_after = 0.0;
  int objective_evaluations = 0;
};

namespace detail {

inline std::array<int, 3> shrink_dims(const std::array<int, 3>& d, int factor) {
  return {std::max(1, d[0] / factor), std::max(1, d[1] / factor), std::max(1, d[2] / factor)};
}

}  // namespace detail

// Rigid alignment of `moving` to `fixed` by maximizing NCC over a 3-level
// coarse-to-fine pyramid with a derivative-free coordinate search: each
// sweep probes +/- the current step on every parameter and keeps
// improvements; steps halve when a sweep stalls.
//
// Non-convergence within the sweep budget is not an error: the best
// transform found is returned with `converged` unset. The final transform
// never scores below the identity on the full-resolution objective.
inline RegistrationResult register_rigid(const Volume& fixed, const Volume& moving,
                                         const RegistrationOptions& opts = {}) {
  RegistrationResult res;
  RigidTransform cur;
  int evals = 0;
  bool last_level_converged = false;

  for (std::size_t li = 0; li < opts.pyramid.size(); ++li) {
    const int factor = opts.pyramid[li];
    Volume f_lvl = factor == 1 ? fixed : resample(fixed, detail::shrink_dims(fixed.dims, factor));
    Volume m_lvl = factor == 1 ? moving : resample(moving, detail::shrink_dims(moving.dims, factor));

    // Parameters live in level units: angles carry over, translations scale.
    std::array<double, 6> p{cur.rotation_deg[0], cur.rotation_deg[1], cur.rotation_deg[2],
                            cur.translation[0] / factor, cur.translation[1] / factor,
                            cur.translation[2] / factor};

    auto objective = [&](const std::array<double, 6>& q) {
      for (int d = 0; d < 3; ++d)
        if (std::abs(q[d]) > opts.max_rotation_deg ||
            std::abs(q[d + 3]) * factor > opts.max_translation)
          return -2.0;  // outside the capture range; below any real NCC
      RigidTransform t{{q[0], q[1], q[2]}, {q[3], q[4], q[5]}};
      ++evals;
      return ncc(f_lvl, apply_transform(m_lvl, t, f_lvl.dims));
    };

    double best = objective(p);
    double rot_step = opts.initial_rotation_step_deg / double(li + 1);
    double trans_step = opts.initial_translation_step / double(li + 1);
    last_level_converged = false;

    for (int sweep = 0; sweep < opts.max_iterations_per_level; ++sweep) {
      bool improved = false;
      for (int d = 0; d < 6; ++d) {
        double step = d < 3 ? rot_step : trans_step;
        for (double sgn : {+1.0, -1.0}) {
          auto q = p;
          q[d] += sgn * step;
          double v = objective(q);
          if (v > best) {
            best = v;
            p = q;
            improved = true;
            break;
          }
        }
      }
      if (!improved) {
        rot_step *= 0.5;
        trans_step *= 0.5;
        if (rot_step < opts.rotation_tolerance_deg && trans_step < opts.translation_tolerance) {
          last_level_converged = true;
          break;
        }
      }
    }

    cur.rotation_deg = {p[0], p[1], p[2]};
    cur.translation = {p[3] * factor, p[4] * factor, p[5] * factor};
  }

  res.ncc_before = ncc(fixed, apply_transform(moving, RigidTransform::identity(), fixed.dims));
  double after = ncc(fixed, apply_transform(moving, cur, fixed.dims));
  evals += 2;
  if (after < res.ncc_before) {
    // The pyramid never beat doing nothing; keep the identity.
    cur = RigidTransform::identity();
    after = res.ncc_before;
  }
  res.transform = cur;
  res.warped = apply_transform(moving, cur, fixed.dims);
  res.ncc_after = after;
  res.converged = last_level_converged;
  res.objective_evaluations = evals;
  return res;
}

}  // namespace paranasal

#endif  // PARANASAL_REGISTRATION_HPP
