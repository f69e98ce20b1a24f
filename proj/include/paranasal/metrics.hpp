#pragma once

// Binary-classification metrics with anomaly as the positive class:
// average precision over the score ranking (ties grouped) and F1 at a
// fixed decision threshold.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "paranasal/core.hpp"

namespace paranasal {

inline std::vector<double> softmax(const std::vector<double>& logits) {
  if (logits.empty()) throw std::invalid_argument("softmax of empty vector");
  double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double sum = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    sum += out[i];
  }
  for (double& x : out) x /= sum;
  return out;
}

inline std::array<double, 2> softmax2(double l0, double l1) {
  double m = std::max(l0, l1);
  double e0 = std::exp(l0 - m), e1 = std::exp(l1 - m);
  double sum = e0 + e1;
  return {e0 / sum, e1 / sum};
}

// Average precision: sum of (R_n - R_{n-1}) * P_n over the operating points
// of the descending score ranking, equal scores collapsed into one point.
// All scores equal therefore gives the positive fraction.
inline double average_precision(const std::vector<double>& scores,
                                const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw std::invalid_argument("scores and labels differ in length");
  if (scores.empty()) throw std::invalid_argument("empty metric input");
  long positives = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw std::invalid_argument("labels must be 0/1");
    if (!std::isfinite(scores[i])) throw std::invalid_argument("non-finite score");
    positives += labels[i];
  }
  if (positives == 0) throw std::invalid_argument("average precision needs a positive");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t(0));
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  double ap = 0;
  double prev_recall = 0;
  long tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      if (labels[order[j]] == 1)
        ++tp;
      else
        ++fp;
      ++j;
    }
    double recall = double(tp) / double(positives);
    double precision = double(tp) / double(tp + fp);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return ap;
}

// F1 for the positive class; 0 by convention when the denominator vanishes.
inline double f1_score(const std::vector<int>& predictions, const std::vector<int>& labels) {
  if (predictions.size() != labels.size())
    throw std::invalid_argument("predictions and labels differ in length");
  long tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if ((predictions[i] != 0 && predictions[i] != 1) || (labels[i] != 0 && labels[i] != 1))
      throw std::invalid_argument("inputs must be 0/1");
    tp += predictions[i] == 1 && labels[i] == 1;
    fp += predictions[i] == 1 && labels[i] == 0;
    fn += predictions[i] == 0 && labels[i] == 1;
  }
  long denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : 2.0 * double(tp) / double(denom);
}

// Mean and unbiased (n-1) standard deviation; one value gives std 0.
inline std::pair<double, double> mean_sample_std(const std::vector<double>& values) {
  if (values.empty()) throw std::invalid_argument("empty sample");
  double mean = std::accumulate(values.begin(), values.end(), 0.0) / double(values.size());
  if (values.size() == 1) return {mean, 0.0};
  double sq = 0;
  for (double v : values) sq += (v - mean) * (v - mean);
  return {mean, std::sqrt(sq / double(values.size() - 1))};
}

struct FoldMetrics {
  int fold = 0;
  double auprc = 0;
  double f1 = 0;
};

// Per-fold metrics plus their mean and spread. The std estimator is the
// sample (n-1) form and is named in the rendered output.
struct MetricsReport {
  double threshold = 0.5;
  bool ensembled = true;
  int samples_per_side = 1;
  int patch_size = 0;
  std::vector<FoldMetrics> folds;

  double mean_auprc() const { return mean_sample_std(column(&FoldMetrics::auprc)).first; }
  double std_auprc() const { return mean_sample_std(column(&FoldMetrics::auprc)).second; }
  double mean_f1() const { return mean_sample_std(column(&FoldMetrics::f1)).first; }
  double std_f1() const { return mean_sample_std(column(&FoldMetrics::f1)).second; }

  void render(std::ostream& out) const {
    out << "threshold\t" << threshold << "\n";
    out << "ensembled\t" << (ensembled ? 1 : 0) << "\n";
    out << "samples_per_side\t" << samples_per_side << "\n";
    out << "patch_size\t" << patch_size << "\n";
    out << "folds\t" << folds.size() << "\n";
    out << "std_estimator\tsample\n";
    out << "fold\tauprc\tf1\n";
    for (const auto& f : folds) out << f.fold << '\t' << f.auprc << '\t' << f.f1 << '\n';
    out << "mean_auprc\t" << mean_auprc() << "\n";
    out << "std_auprc\t" << std_auprc() << "\n";
    out << "mean_f1\t" << mean_f1() << "\n";
    out << "std_f1\t" << std_f1() << "\n";
  }

 private:
  std::vector<double> column(double FoldMetrics::* member) const {
    if (folds.empty()) throw std::invalid_argument("report has no folds");
    std::vector<double> out;
    out.reserve(folds.size());
    for (const auto& f : folds) out.push_back(f.*member);
    return out;
  }
};

inline void save_metrics(const MetricsReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot open for writing: " + path.string());
  out.precision(10);
  report.render(out);
  if (!out) throw io_error("failed writing: " + path.string());
}

}  // namespace paranasal
