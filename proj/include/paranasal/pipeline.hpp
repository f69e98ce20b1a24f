#pragma once

// Stage orchestration behind the command-line tool. Every stage writes
// into its own namespaced directory under the run root, never touching
// the outputs of earlier stages, and drops a frozen config copy beside
// its outputs. Paths inside manifests resolve relative to the manifest
// file's directory unless absolute.

#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "paranasal/config.hpp"
#include "paranasal/eval.hpp"
#include "paranasal/manifest.hpp"
#include "paranasal/nn/checkpoint.hpp"
#include "paranasal/phantom.hpp"
#include "paranasal/registration.hpp"
#include "paranasal/sampling.hpp"

namespace paranasal {

namespace fs = std::filesystem;

inline std::string cell_name(int n, int p) {
  return "n" + std::to_string(n) + "-p" + std::to_string(p);
}

struct RunLayout {
  fs::path out;

  fs::path registered() const { return out / "registered"; }
  fs::path centroids() const { return out / "centroids"; }
  fs::path centroid_model() const { return centroids() / "centroid_model.tsv"; }
  fs::path instances(int n, int p) const { return out / "instances" / cell_name(n, p); }
  fs::path splits() const { return out / "splits"; }
  fs::path models(int n, int p) const { return out / "models" / cell_name(n, p); }
  fs::path checkpoint(int n, int p, int fold) const {
    return models(n, p) / ("fold" + std::to_string(fold) + ".ckpt");
  }
  fs::path predictions(int n, int p) const { return out / "predictions" / cell_name(n, p); }
  fs::path metrics(int n, int p) const { return out / "metrics" / cell_name(n, p); }
  fs::path sweep() const { return out / "sweep"; }
};

namespace detail {

inline fs::path resolve(const std::string& path, const fs::path& base) {
  fs::path p(path);
  return p.is_absolute() ? p : base / p;
}

inline Manifest load_manifest_checked(const fs::path& path, const std::string& hint) {
  if (!fs::exists(path)) throw io_error("missing " + path.string() + "; " + hint);
  return load_manifest(path);
}

// Subject manifest for downstream stages: the register stage's output
// when present, otherwise the cohort's own manifest.
inline std::pair<Manifest, fs::path> source_manifest(const fs::path& data_root,
                                                     const RunLayout& layout) {
  fs::path staged = layout.registered() / "manifest.tsv";
  if (fs::exists(staged)) return {load_manifest(staged), layout.registered()};
  fs::path cohort = data_root / "manifest.tsv";
  if (fs::exists(cohort)) return {load_manifest(cohort), data_root};
  throw io_error("no manifest under " + staged.string() + " or " + cohort.string() +
                 "; run the phantom stage (or point at a cohort), then register");
}

inline Volume load_registered_volume(const SubjectRecord& subject, const fs::path& base) {
  if (subject.registered_path == "-" || subject.registered_path.empty())
    throw io_error("subject " + subject.subject_id +
                   " has no registered volume; run the register stage first");
  return load_volume(resolve(subject.registered_path, base).string());
}

}  // namespace detail

// ---- phantom ----------------------------------------------------------

inline CohortOutput run_phantom_stage(const PhantomSpec& spec, const fs::path& data_root,
                                      std::ostream& log) {
  log << "generating " << spec.cohort << "-subject cohort under " << data_root.string()
      << "\n";
  CohortOutput out = write_cohort(spec, data_root);
  log << "cohort manifest: " << (data_root / "manifest.tsv").string() << "\n";
  return out;
}

// ---- register ---------------------------------------------------------

struct RegisterStageResult {
  int subjects = 0;
  int converged = 0;
  double mean_ncc_after = 0;
};

inline RegisterStageResult run_register_stage(const PipelineConfig& cfg,
                                              const fs::path& data_root,
                                              const RunLayout& layout, std::ostream& log) {
  fs::path reference_path = data_root / "reference.nii.gz";
  if (!fs::exists(reference_path))
    throw io_error("missing " + reference_path.string() +
                   "; run the phantom stage or provide a cohort with a reference volume");
  Manifest manifest = detail::load_manifest_checked(
      data_root / "manifest.tsv", "run the phantom stage or provide a cohort manifest");

  DirectoryLock lock(layout.registered());
  freeze_config(cfg, layout.registered() / "config.json");
  Volume reference = load_volume(reference_path.string());

  RegisterStageResult result;
  for (auto& subject : manifest.subjects) {
    if (subject.source_path == "-" || subject.source_path.empty())
      throw io_error("subject " + subject.subject_id + " has no raw volume path");
    fs::path raw_path = detail::resolve(subject.source_path, data_root);
    Volume raw = load_volume(raw_path.string());
    RegistrationResult reg = register_rigid(reference, raw, cfg.registration);
    std::string name = subject.subject_id + ".nii.gz";
    save_volume(reg.warped, (layout.registered() / name).string());
    save_transform(reg.transform,
                   (layout.registered() / (subject.subject_id + ".transform.tsv")).string());
    subject.source_path = fs::absolute(raw_path).string();
    subject.registered_path = name;
    ++result.subjects;
    result.converged += reg.converged ? 1 : 0;
    result.mean_ncc_after += reg.ncc_after;
    log << subject.subject_id << ": ncc " << reg.ncc_before << " -> " << reg.ncc_after
        << (reg.converged ? "" : " (budget exhausted)") << "\n";
  }
  if (result.subjects > 0) result.mean_ncc_after /= result.subjects;
  save_manifest(manifest, layout.registered() / "manifest.tsv");
  log << "registered " << result.subjects << " subjects, mean ncc "
      << result.mean_ncc_after << "\n";
  return result;
}

// ---- fit-centroids ----------------------------------------------------

inline CentroidModel run_fit_centroids_stage(const PipelineConfig& cfg,
                                             const fs::path& data_root,
                                             const RunLayout& layout, std::ostream& log) {
  fs::path annotations_path = detail::resolve(cfg.annotations, data_root);
  if (!fs::exists(annotations_path))
    throw io_error("missing annotations at " + annotations_path.string() +
                   "; the phantom stage writes them, or supply manual ones");
  auto annotations = load_annotations(annotations_path);

  DirectoryLock lock(layout.centroids());
  freeze_config(cfg, layout.centroids() / "config.json");
  CentroidModel model = fit_centroid_model(annotations);
  save_centroid_model(model, layout.centroid_model());
  log << "fitted centroid model from " << annotations.size() << " annotations -> "
      << layout.centroid_model().string() << "\n";
  return model;
}

// ---- extract ----------------------------------------------------------

struct ExtractStageResult {
  int subjects = 0;
  int instances = 0;
};

inline ExtractStageResult run_extract_stage(const PipelineConfig& cfg,
                                            const fs::path& data_root,
                                            const RunLayout& layout, std::ostream& log) {
  auto [manifest, base] = detail::source_manifest(data_root, layout);
  if (!fs::exists(layout.centroid_model()))
    throw io_error("missing " + layout.centroid_model().string() +
                   "; run the fit-centroids stage first");
  CentroidModel model = load_centroid_model(layout.centroid_model());

  const int n = cfg.samples_per_side, p = cfg.patch_size;
  fs::path dir = layout.instances(n, p);
  DirectoryLock lock(dir);
  freeze_config(cfg, dir / "config.json");

  ExtractStageResult result;
  manifest.instances.clear();
  manifest.assignments.clear();
  for (const auto& subject : manifest.subjects) {
    if (subject.included_count() == 0) continue;
    Volume registered = detail::load_registered_volume(subject, base);
    for (Side side : {Side::left, Side::right}) {
      if (!subject.sides[std::size_t(side)].included) continue;
      auto centroids = sample_centroids(
          model, side, n, side_stream_seed(cfg.seed, subject.subject_id, side));
      for (int i = 0; i < n; ++i) {
        Instance inst =
            extract_instance(registered, subject.subject_id, centroids[std::size_t(i)], p, side);
        InstanceRow row;
        row.subject_id = subject.subject_id;
        row.side = side;
        row.centroid = inst.centroid;
        row.patch_size = p;
        row.label = subject.sides[std::size_t(side)].label;
        row.path = subject.subject_id + "-" + to_string(side) + "-" + std::to_string(i) +
                   ".nii.gz";
        save_volume(inst.data, (dir / row.path).string());
        manifest.instances.push_back(std::move(row));
        ++result.instances;
      }
    }
    ++result.subjects;
  }
  if (result.instances == 0) throw io_error("cohort has no included sinuses to extract");
  // Instance paths are relative to this directory; keep volume paths valid.
  for (auto& subject : manifest.subjects) {
    if (subject.source_path != "-" && !subject.source_path.empty())
      subject.source_path = fs::absolute(detail::resolve(subject.source_path, base)).string();
    if (subject.registered_path != "-" && !subject.registered_path.empty())
      subject.registered_path =
          fs::absolute(detail::resolve(subject.registered_path, base)).string();
  }
  save_manifest(manifest, dir / "manifest.tsv");
  log << "extracted " << result.instances << " instances (" << n << " per side, patch " << p
      << ") from " << result.subjects << " subjects -> " << dir.string() << "\n";
  return result;
}

// ---- split ------------------------------------------------------------

inline Manifest run_split_stage(const PipelineConfig& cfg, const fs::path& data_root,
                                const RunLayout& layout, std::ostream& log) {
  auto [manifest, base] = detail::source_manifest(data_root, layout);
  (void)base;
  DirectoryLock lock(layout.splits());
  freeze_config(cfg, layout.splits() / "config.json");
  manifest.instances.clear();
  manifest.assignments.clear();
  Manifest assigned = make_splits(manifest, cfg.ratios, cfg.seed, cfg.folds);
  save_manifest(assigned, layout.splits() / "manifest.tsv");
  log << "assigned " << assigned.subjects.size() << " subjects across " << cfg.folds
      << " folds -> " << (layout.splits() / "manifest.tsv").string() << "\n";
  return assigned;
}

// ---- train / predict / evaluate ---------------------------------------

// Instances from the extract stage joined with the split stage's fold
// assignments; validated before use.
inline Manifest assemble_run_manifest(const RunLayout& layout, int n, int p) {
  Manifest instances = detail::load_manifest_checked(
      layout.instances(n, p) / "manifest.tsv",
      "run the extract stage for " + cell_name(n, p) + " first");
  Manifest splits = detail::load_manifest_checked(layout.splits() / "manifest.tsv",
                                                  "run the split stage first");
  instances.assignments = splits.assignments;
  ValidationReport validation = validate_manifest(instances);
  if (!validation.violations.empty())
    throw format_error("manifest validation failed: " + validation.violations.front());
  return instances;
}

inline MetricsReport run_train_stage(const PipelineConfig& cfg, const RunLayout& layout,
                                     std::ostream& log) {
  const int n = cfg.samples_per_side, p = cfg.patch_size;
  Manifest manifest = assemble_run_manifest(layout, n, p);
  FileInstanceProvider provider(layout.instances(n, p));

  fs::path dir = layout.models(n, p);
  DirectoryLock lock(dir);
  freeze_config(cfg, dir / "config.json");

  CrossValSetup setup;
  setup.network = nn::NetworkConfig::preset(cfg.network);
  setup.train = cfg.train;
  setup.eval.ensembled = cfg.ensembled;
  setup.eval.threshold = cfg.threshold;
  setup.seed = cfg.seed;
  std::uint64_t digest = setup.network.digest();
  setup.on_fold_trained = [&](int fold, nn::ResNet3d<float>& net,
                              const nn::TrainResult& trained) {
    nn::save_checkpoint(layout.checkpoint(n, p, fold).string(), net.params(), digest,
                        trained.best);
    nn::save_history((dir / ("fold" + std::to_string(fold) + "_history.tsv")).string(),
                     trained.history);
    log << "fold " << fold << ": best val loss " << trained.best.val_loss << " at epoch "
        << trained.best.epoch << "\n";
  };
  CrossValResult result = cross_validate(manifest, provider, setup);
  save_metrics(result.report, dir / "train_metrics.txt");
  log << "trained " << result.folds.size() << " folds -> " << dir.string() << "\n";
  return result.report;
}

// Networks for every trained fold, reloaded from their checkpoints.
inline std::vector<nn::ResNet3d<float>> load_fold_networks(const PipelineConfig& cfg,
                                                           const RunLayout& layout,
                                                           int folds) {
  const int n = cfg.samples_per_side, p = cfg.patch_size;
  nn::NetworkConfig network = nn::NetworkConfig::preset(cfg.network);
  std::vector<nn::ResNet3d<float>> nets;
  for (int fold = 0; fold < folds; ++fold) {
    fs::path ckpt = layout.checkpoint(n, p, fold);
    if (!fs::exists(ckpt))
      throw io_error("missing " + ckpt.string() + "; run the train stage for " +
                     cell_name(n, p) + " first");
    nets.emplace_back(network, 0);
    auto params = nets.back().params();
    nn::load_checkpoint(ckpt.string(), params, network.digest());
  }
  return nets;
}

inline void run_predict_stage(const PipelineConfig& cfg, const RunLayout& layout,
                              std::ostream& log) {
  const int n = cfg.samples_per_side, p = cfg.patch_size;
  Manifest manifest = assemble_run_manifest(layout, n, p);
  FileInstanceProvider provider(layout.instances(n, p));
  auto nets = load_fold_networks(cfg, layout, manifest.fold_count());

  fs::path dir = layout.predictions(n, p);
  DirectoryLock lock(dir);
  freeze_config(cfg, dir / "config.json");
  EvalOptions opts;
  opts.ensembled = cfg.ensembled;
  opts.threshold = cfg.threshold;
  for (int fold = 0; fold < manifest.fold_count(); ++fold) {
    FoldRows rows = rows_for_fold(manifest, fold);
    auto scores = score_rows(nets[std::size_t(fold)], rows.test, provider, opts);
    fs::path path = dir / ("fold" + std::to_string(fold) + ".tsv");
    save_predictions(path, scores);
    log << "fold " << fold << ": " << scores.size() << " predictions -> " << path.string()
        << "\n";
  }
}

inline MetricsReport run_evaluate_stage(const PipelineConfig& cfg, const RunLayout& layout,
                                        std::ostream& log) {
  const int n = cfg.samples_per_side, p = cfg.patch_size;
  Manifest manifest = assemble_run_manifest(layout, n, p);
  FileInstanceProvider provider(layout.instances(n, p));
  auto nets = load_fold_networks(cfg, layout, manifest.fold_count());

  fs::path dir = layout.metrics(n, p);
  DirectoryLock lock(dir);
  freeze_config(cfg, dir / "config.json");
  EvalOptions opts;
  opts.ensembled = cfg.ensembled;
  opts.threshold = cfg.threshold;
  MetricsReport report;
  report.threshold = opts.threshold;
  report.ensembled = opts.ensembled;
  report.samples_per_side = manifest_samples_per_side(manifest);
  report.patch_size = manifest_patch_size(manifest);
  for (int fold = 0; fold < manifest.fold_count(); ++fold) {
    FoldRows rows = rows_for_fold(manifest, fold);
    if (rows.test.empty()) throw std::invalid_argument("empty test split");
    report.folds.push_back(metrics_from_scores(
        fold, score_rows(nets[std::size_t(fold)], rows.test, provider, opts)));
  }
  save_metrics(report, dir / "metrics.txt");
  log << "mean auprc " << report.mean_auprc() << ", mean f1 " << report.mean_f1() << " -> "
      << (dir / "metrics.txt").string() << "\n";
  return report;
}

// ---- sweep ------------------------------------------------------------

inline std::vector<SweepCell> run_sweep_stage(const PipelineConfig& cfg,
                                              const fs::path& data_root,
                                              const RunLayout& layout, const SweepPlan& plan,
                                              std::ostream& log) {
  DirectoryLock lock(layout.sweep());
  freeze_config(cfg, layout.sweep() / "config.json");
  auto cells = run_sweep(plan, [&](int n, int p) {
    PipelineConfig cell_cfg = cfg;
    cell_cfg.samples_per_side = n;
    cell_cfg.patch_size = p;
    if (!fs::exists(layout.instances(n, p) / "manifest.tsv")) {
      log << "sweep: extracting " << cell_name(n, p) << "\n";
      run_extract_stage(cell_cfg, data_root, layout, log);
    }
    Manifest manifest = assemble_run_manifest(layout, n, p);
    FileInstanceProvider provider(layout.instances(n, p));
    CrossValSetup setup;
    setup.network = nn::NetworkConfig::preset(cfg.network);
    setup.train = cfg.train;
    setup.eval.ensembled = cfg.ensembled;
    setup.eval.threshold = cfg.threshold;
    setup.seed = Rng(cfg.seed).derive("sweep").derive(std::uint64_t(n)).derive(
        std::uint64_t(p)).seed();
    CrossValResult result = cross_validate(manifest, provider, setup);
    fs::path cell_dir = layout.sweep() / cell_name(n, p);
    fs::create_directories(cell_dir);
    save_metrics(result.report, cell_dir / "metrics.txt");
    log << "sweep " << cell_name(n, p) << ": mean f1 " << result.report.mean_f1() << "\n";
    return result.report;
  });
  save_sweep_table(layout.sweep() / "sweep.tsv", cells);
  auto has_cell = [&](auto pred) {
    for (const auto& c : cells)
      if (pred(c)) return true;
    return false;
  };
  if (has_cell([&](const SweepCell& c) { return c.n == plan.fixed_n; }))
    save_sweep_series(layout.sweep() / "f1_vs_p.tsv", cells, SweepAxis::patch_size,
                      plan.fixed_n);
  if (has_cell([&](const SweepCell& c) { return c.p == plan.fixed_p; }))
    save_sweep_series(layout.sweep() / "metrics_vs_n.tsv", cells, SweepAxis::samples,
                      plan.fixed_p);
  log << "sweep table -> " << (layout.sweep() / "sweep.tsv").string() << "\n";
  return cells;
}

// ---- report -----------------------------------------------------------

inline std::string run_report_stage(const RunLayout& layout, std::ostream& log) {
  std::ostringstream report;
  report << "pipeline report\n===============\n";
  bool any = false;
  fs::path metrics_root = layout.out / "metrics";
  if (fs::exists(metrics_root)) {
    for (const auto& entry : fs::directory_iterator(metrics_root)) {
      fs::path file = entry.path() / "metrics.txt";
      if (!fs::exists(file)) continue;
      report << "\n[" << entry.path().filename().string() << "]\n";
      std::ifstream in(file);
      report << in.rdbuf();
      any = true;
    }
  }
  fs::path sweep_table = layout.sweep() / "sweep.tsv";
  if (fs::exists(sweep_table)) {
    report << "\n[sweep]\n";
    std::ifstream in(sweep_table);
    report << in.rdbuf();
    for (const char* series : {"f1_vs_p.tsv", "metrics_vs_n.tsv"}) {
      fs::path s = layout.sweep() / series;
      if (!fs::exists(s)) continue;
      report << "\nseries " << series << ":\n";
      std::ifstream sin(s);
      report << sin.rdbuf();
    }
    any = true;
  }
  if (!any)
    throw io_error("nothing to report under " + layout.out.string() +
                   "; run the evaluate or sweep stage first");
  fs::path path = layout.out / "report.txt";
  std::ofstream out(path);
  out << report.str();
  if (!out) throw io_error("write failed for " + path.string());
  log << "report -> " << path.string() << "\n";
  return report.str();
}

}  // namespace paranasal
