#pragma once

// Multiple-instance ensembling: the prediction for one (subject, side) is
// the arithmetic mean of the per-instance softmax vectors, thresholded on
// the anomaly probability.

#include <array>
#include <stdexcept>
#include <string>
#include <vector>

#include "paranasal/core.hpp"
#include "paranasal/metrics.hpp"
#include "paranasal/sampling.hpp"

namespace paranasal {

struct EnsembleResult {
  std::string subject_id;
  Side side = Side::left;
  std::array<double, 2> probabilities{};  // [normal, anomaly]
  Label prediction = Label::normal;
  int instance_count = 0;
};

// Mean of per-instance probability vectors. A run of identical vectors
// short-circuits to the shared vector, so the n=1 case and the all-equal
// case reproduce a member bitwise.
inline EnsembleResult ensemble_from_probabilities(
    const std::string& subject_id, Side side,
    const std::vector<std::array<double, 2>>& instance_probs, double threshold = 0.5) {
  if (instance_probs.empty()) throw std::invalid_argument("ensemble of zero instances");
  EnsembleResult r;
  r.subject_id = subject_id;
  r.side = side;
  r.instance_count = int(instance_probs.size());
  bool all_equal = true;
  for (const auto& p : instance_probs) all_equal = all_equal && p == instance_probs[0];
  if (all_equal) {
    r.probabilities = instance_probs[0];
  } else {
    double s0 = 0, s1 = 0;
    for (const auto& p : instance_probs) {
      s0 += p[0];
      s1 += p[1];
    }
    r.probabilities = {s0 / double(instance_probs.size()), s1 / double(instance_probs.size())};
  }
  r.prediction =
      r.probabilities[std::size_t(Label::anomaly)] >= threshold ? Label::anomaly : Label::normal;
  return r;
}

inline EnsembleResult ensemble_from_logits(const std::string& subject_id, Side side,
                                           const std::vector<std::array<double, 2>>& logits,
                                           double threshold = 0.5) {
  std::vector<std::array<double, 2>> probs;
  probs.reserve(logits.size());
  for (const auto& l : logits) probs.push_back(softmax2(l[0], l[1]));
  return ensemble_from_probabilities(subject_id, side, probs, threshold);
}

// Checks that every instance belongs to the one (subject, side) being
// ensembled; mixing sides or subjects is a caller bug, not data.
inline void require_uniform_group(const std::vector<Instance>& instances) {
  if (instances.empty()) throw std::invalid_argument("ensemble of zero instances");
  for (const auto& inst : instances)
    if (inst.subject_id != instances[0].subject_id || inst.side != instances[0].side)
      throw std::invalid_argument("ensemble instances span multiple (subject, side) groups");
}

}  // namespace paranasal
