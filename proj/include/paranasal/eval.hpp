#pragma once

// Connects trained networks to manifests: per-side scoring with optional
// instance ensembling, fold-wise cross-validation, and the N/P sweep
// harness with its table and series outputs.

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "paranasal/ensemble.hpp"
#include "paranasal/manifest.hpp"
#include "paranasal/metrics.hpp"
#include "paranasal/nifti.hpp"
#include "paranasal/nn/resnet.hpp"
#include "paranasal/nn/train.hpp"
#include "paranasal/sampling.hpp"
#include "paranasal/volume.hpp"

namespace paranasal {

class InstanceProvider {
 public:
  virtual ~InstanceProvider() = default;
  virtual Volume fetch(const InstanceRow& row) const = 0;
};

// Reads instance volumes referenced by the manifest, relative to a root.
class FileInstanceProvider : public InstanceProvider {
 public:
  explicit FileInstanceProvider(std::filesystem::path root) : root_(std::move(root)) {}

  Volume fetch(const InstanceRow& row) const override {
    Volume v = load_volume((root_ / row.path).string());
    if (v.dims[0] != instance_edge || v.dims[1] != instance_edge ||
        v.dims[2] != instance_edge)
      throw format_error("instance volume has wrong shape: " + row.path);
    return v;
  }

 private:
  std::filesystem::path root_;
};

// Adapts a set of manifest rows to the trainer's example interface.
class RowSource : public nn::ExampleSource<float> {
 public:
  RowSource(std::vector<InstanceRow> rows, const InstanceProvider& provider,
            bool cache = true)
      : rows_(std::move(rows)), provider_(provider), cache_(cache) {
    if (cache_) cached_.resize(rows_.size());
  }

  std::size_t size() const override { return rows_.size(); }
  int label(std::size_t i) const override { return int(rows_[i].label); }
  std::array<int, 4> example_shape() const override {
    return {1, instance_edge, instance_edge, instance_edge};
  }

  void fetch(std::size_t i, float* dst) const override {
    if (cache_ && !cached_[i].empty()) {
      std::copy(cached_[i].begin(), cached_[i].end(), dst);
      return;
    }
    Volume v = provider_.fetch(rows_[i]);
    std::copy(v.data.begin(), v.data.end(), dst);
    if (cache_) cached_[i] = std::move(v.data);
  }

  const std::vector<InstanceRow>& rows() const { return rows_; }

 private:
  std::vector<InstanceRow> rows_;
  const InstanceProvider& provider_;
  bool cache_;
  mutable std::vector<std::vector<float>> cached_;
};

struct EvalOptions {
  bool ensembled = true;
  double threshold = 0.5;
  int batch_size = 8;
  bool cache_instances = true;
};

// One scored evaluation unit: a (subject, side) when ensembled, a single
// instance otherwise.
struct SideScore {
  std::string subject_id;
  Side side = Side::left;
  std::array<double, 2> probabilities{};  // [normal, anomaly]
  Label prediction = Label::normal;
  Label label = Label::normal;
  int instance_count = 0;
};

// Scores rows in first-appearance group order.
inline std::vector<SideScore> score_rows(nn::ResNet3d<float>& net,
                                         const std::vector<InstanceRow>& rows,
                                         const InstanceProvider& provider,
                                         const EvalOptions& opts) {
  if (rows.empty()) throw std::invalid_argument("no instances to score");
  RowSource source(rows, provider, opts.cache_instances);
  auto probs = nn::infer_probabilities(net, source, opts.batch_size);

  std::vector<SideScore> out;
  if (!opts.ensembled) {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      SideScore s;
      s.subject_id = rows[i].subject_id;
      s.side = rows[i].side;
      s.probabilities = {probs[i][0], probs[i][1]};
      s.prediction = probs[i][1] >= opts.threshold ? Label::anomaly : Label::normal;
      s.label = rows[i].label;
      s.instance_count = 1;
      out.push_back(std::move(s));
    }
    return out;
  }

  std::vector<std::pair<std::string, Side>> order;
  std::map<std::pair<std::string, Side>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto key = std::make_pair(rows[i].subject_id, rows[i].side);
    auto [it, fresh] = groups.try_emplace(key);
    if (fresh) order.push_back(key);
    it->second.push_back(i);
  }
  for (const auto& key : order) {
    const auto& idx = groups[key];
    std::vector<std::array<double, 2>> group_probs;
    group_probs.reserve(idx.size());
    Label label = rows[idx.front()].label;
    for (std::size_t i : idx) {
      if (rows[i].label != label)
        throw std::invalid_argument("conflicting labels within one sinus group");
      group_probs.push_back({probs[i][0], probs[i][1]});
    }
    EnsembleResult ens =
        ensemble_from_probabilities(key.first, key.second, group_probs, opts.threshold);
    SideScore s;
    s.subject_id = ens.subject_id;
    s.side = ens.side;
    s.probabilities = ens.probabilities;
    s.prediction = ens.prediction;
    s.label = label;
    s.instance_count = ens.instance_count;
    out.push_back(std::move(s));
  }
  return out;
}

inline FoldMetrics metrics_from_scores(int fold, const std::vector<SideScore>& scores) {
  std::vector<double> anomaly_probs;
  std::vector<int> labels, predictions;
  for (const auto& s : scores) {
    anomaly_probs.push_back(s.probabilities[1]);
    labels.push_back(int(s.label));
    predictions.push_back(int(s.prediction));
  }
  FoldMetrics m;
  m.fold = fold;
  m.auprc = average_precision(anomaly_probs, labels);
  m.f1 = f1_score(predictions, labels);
  return m;
}

inline void save_predictions(const std::filesystem::path& path,
                             const std::vector<SideScore>& scores) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot open for writing: " + path.string());
  out.precision(17);
  out << "subject_id\tside\tp_normal\tp_anomaly\tprediction\tlabel\tinstances\n";
  for (const auto& s : scores)
    out << s.subject_id << '\t' << to_string(s.side) << '\t' << s.probabilities[0] << '\t'
        << s.probabilities[1] << '\t' << to_string(s.prediction) << '\t'
        << to_string(s.label) << '\t' << s.instance_count << '\n';
  if (!out) throw io_error("write failed for " + path.string());
}

// Instance rows of one fold, grouped by split assignment.
struct FoldRows {
  std::vector<InstanceRow> train, val, test;
};

inline FoldRows rows_for_fold(const Manifest& m, int fold) {
  auto assignment = m.fold_assignments(fold);
  if (assignment.empty())
    throw std::invalid_argument("no assignments for fold " + std::to_string(fold) +
                                "; run the split stage first");
  FoldRows out;
  for (const auto& row : m.instances) {
    auto it = assignment.find(row.subject_id);
    if (it == assignment.end()) continue;
    switch (it->second) {
      case SplitKind::train: out.train.push_back(row); break;
      case SplitKind::val: out.val.push_back(row); break;
      case SplitKind::test: out.test.push_back(row); break;
    }
  }
  return out;
}

// Instances per (subject, side); throws when the manifest mixes counts.
inline int manifest_samples_per_side(const Manifest& m) {
  std::map<std::pair<std::string, Side>, int> counts;
  for (const auto& row : m.instances) ++counts[{row.subject_id, row.side}];
  if (counts.empty()) throw std::invalid_argument("manifest has no instances");
  int n = counts.begin()->second;
  for (const auto& [key, c] : counts)
    if (c != n) throw std::invalid_argument("uneven instance counts per sinus");
  return n;
}

inline int manifest_patch_size(const Manifest& m) {
  if (m.instances.empty()) throw std::invalid_argument("manifest has no instances");
  int p = m.instances.front().patch_size;
  for (const auto& row : m.instances)
    if (row.patch_size != p) throw std::invalid_argument("mixed patch sizes in manifest");
  return p;
}

// Evaluates one network on one fold's test split.
inline MetricsReport evaluate(nn::ResNet3d<float>& net, const Manifest& m,
                              const InstanceProvider& provider, int fold,
                              const EvalOptions& opts) {
  FoldRows rows = rows_for_fold(m, fold);
  if (rows.test.empty()) throw std::invalid_argument("empty test split");
  MetricsReport report;
  report.threshold = opts.threshold;
  report.ensembled = opts.ensembled;
  report.samples_per_side = manifest_samples_per_side(m);
  report.patch_size = manifest_patch_size(m);
  report.folds.push_back(metrics_from_scores(fold, score_rows(net, rows.test, provider, opts)));
  return report;
}

struct CrossValSetup {
  nn::NetworkConfig network;
  nn::TrainConfig train;  // the seed field is ignored; fold seeds derive from `seed`
  EvalOptions eval;
  std::uint64_t seed = 0;
  // Called after each fold finishes training, before its evaluation.
  std::function<void(int fold, nn::ResNet3d<float>& net, const nn::TrainResult&)>
      on_fold_trained;
};

struct CrossValResult {
  MetricsReport report;
  std::vector<nn::TrainResult> folds;
};

inline std::uint64_t fold_seed(std::uint64_t seed, std::string_view stream, int fold) {
  return Rng(seed).derive(stream).derive(std::uint64_t(fold)).seed();
}

// Trains a fresh network per fold and evaluates it on that fold's test
// split. Deterministic given the manifest, provider content, and seed.
inline CrossValResult cross_validate(const Manifest& m, const InstanceProvider& provider,
                                     const CrossValSetup& setup) {
  int folds = m.fold_count();
  if (folds == 0) throw std::invalid_argument("manifest has no fold assignments");
  CrossValResult result;
  result.report.threshold = setup.eval.threshold;
  result.report.ensembled = setup.eval.ensembled;
  result.report.samples_per_side = manifest_samples_per_side(m);
  result.report.patch_size = manifest_patch_size(m);
  for (int fold = 0; fold < folds; ++fold) {
    FoldRows rows = rows_for_fold(m, fold);
    if (rows.train.empty() || rows.test.empty())
      throw std::invalid_argument("fold " + std::to_string(fold) + " lacks train or test data");
    RowSource train_source(rows.train, provider, setup.eval.cache_instances);
    RowSource val_source(rows.val, provider, setup.eval.cache_instances);
    nn::ResNet3d<float> net(setup.network, fold_seed(setup.seed, "fold-net", fold));
    nn::TrainConfig cfg = setup.train;
    cfg.seed = fold_seed(setup.seed, "fold-shuffle", fold);
    nn::TrainResult trained =
        rows.val.empty() ? nn::train(net, train_source, cfg)
                         : nn::train(net, train_source, &val_source, cfg);
    if (setup.on_fold_trained) setup.on_fold_trained(fold, net, trained);
    result.report.folds.push_back(
        metrics_from_scores(fold, score_rows(net, rows.test, provider, setup.eval)));
    result.folds.push_back(std::move(trained));
  }
  return result;
}

struct SweepPlan {
  std::vector<int> n_grid{1, 5, 10, 15, 20};
  std::vector<int> p_grid{25, 30, 35, 40, 45};
  // Full-factorial by default; axis-wise varies one knob while pinning
  // the other at its fixed_* value.
  bool axis_wise = false;
  int fixed_n = 15;
  int fixed_p = 35;
};

struct SweepCell {
  int n = 0;
  int p = 0;
  MetricsReport report;
};

inline std::vector<std::pair<int, int>> sweep_cells(const SweepPlan& plan) {
  if (plan.n_grid.empty() || plan.p_grid.empty())
    throw std::invalid_argument("sweep grids must be non-empty");
  std::vector<std::pair<int, int>> cells;
  auto add = [&](int n, int p) {
    for (const auto& c : cells)
      if (c.first == n && c.second == p) return;
    cells.emplace_back(n, p);
  };
  if (plan.axis_wise) {
    for (int p : plan.p_grid) add(plan.fixed_n, p);
    for (int n : plan.n_grid) add(n, plan.fixed_p);
  } else {
    for (int n : plan.n_grid)
      for (int p : plan.p_grid) add(n, p);
  }
  return cells;
}

// Runs one cross-validation per cell through the supplied runner.
inline std::vector<SweepCell> run_sweep(
    const SweepPlan& plan, const std::function<MetricsReport(int n, int p)>& runner) {
  std::vector<SweepCell> out;
  for (auto [n, p] : sweep_cells(plan)) {
    SweepCell cell;
    cell.n = n;
    cell.p = p;
    cell.report = runner(n, p);
    out.push_back(std::move(cell));
  }
  return out;
}

inline void save_sweep_table(const std::filesystem::path& path,
                             const std::vector<SweepCell>& cells) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot open for writing: " + path.string());
  out.precision(10);
  out << "n\tp\tfold\tauprc\tf1\n";
  for (const auto& cell : cells)
    for (const auto& f : cell.report.folds)
      out << cell.n << '\t' << cell.p << '\t' << f.fold << '\t' << f.auprc << '\t' << f.f1
          << '\n';
  if (!out) throw io_error("write failed for " + path.string());
}

enum class SweepAxis { samples, patch_size };

// Plot-ready series: metric mean and spread against one swept knob with
// the other held fixed.
inline void save_sweep_series(const std::filesystem::path& path,
                              const std::vector<SweepCell>& cells, SweepAxis axis,
                              int fixed_value) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot open for writing: " + path.string());
  out.precision(10);
  out << (axis == SweepAxis::patch_size ? "p" : "n")
      << "\tmean_auprc\tstd_auprc\tmean_f1\tstd_f1\n";
  for (const auto& cell : cells) {
    int pinned = axis == SweepAxis::patch_size ? cell.n : cell.p;
    if (pinned != fixed_value) continue;
    int swept = axis == SweepAxis::patch_size ? cell.p : cell.n;
    out << swept << '\t' << cell.report.mean_auprc() << '\t' << cell.report.std_auprc()
        << '\t' << cell.report.mean_f1() << '\t' << cell.report.std_f1() << '\n';
  }
  if (!out) throw io_error("write failed for " + path.string());
}

}  // namespace paranasal
