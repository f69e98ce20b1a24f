// Command-line entry point for the sinus classification pipeline.
// Stages: phantom -> register -> fit-centroids -> extract -> split ->
// train -> predict -> evaluate; sweep and report sit on top.
// Exit codes: 0 success, 1 configuration/usage error, 2 stage failure.

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "paranasal/pipeline.hpp"

namespace {

using paranasal::PipelineConfig;

struct CommonFlags {
  std::string config_path;
  std::string data_root;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> n;
  std::optional<int> patch_size;
  std::optional<int> folds;
  std::optional<bool> ensembled;
  std::optional<std::string> network;
  std::optional<int> epochs;
  std::optional<int> batch_size;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config_path, "JSON configuration file");
  cmd->add_option("--data-root", f.data_root,
                  "Cohort directory (overrides config and " +
                      std::string(paranasal::data_root_env) + ")");
  cmd->add_option("--out", f.out_dir, "Run output directory");
  cmd->add_option("--seed", f.seed, "Master seed");
  cmd->add_option("--n", f.n, "Instances sampled per side (N)");
  cmd->add_option("--patch-size", f.patch_size, "Crop edge length in voxels (P)");
  cmd->add_option("--folds", f.folds, "Cross-validation fold count");
  cmd->add_flag_callback("--ensemble", [&f] { f.ensembled = true; },
                         "Average instance probabilities per sinus (default on)");
  cmd->add_flag_callback("--no-ensemble", [&f] { f.ensembled = false; },
                         "Score every instance independently");
  cmd->add_option("--network", f.network, "Network preset: full or tiny")
      ->check(CLI::IsMember({"full", "tiny"}));
  cmd->add_option("--epochs", f.epochs, "Training epochs");
  cmd->add_option("--batch-size", f.batch_size, "Training batch size");
}

// Config file first, then explicit flags on top.
PipelineConfig resolve_config(const CommonFlags& f) {
  PipelineConfig cfg =
      f.config_path.empty() ? PipelineConfig{} : paranasal::load_config(f.config_path);
  if (f.seed) cfg.seed = *f.seed;
  if (f.n) cfg.samples_per_side = *f.n;
  if (f.patch_size) cfg.patch_size = *f.patch_size;
  if (f.folds) cfg.folds = *f.folds;
  if (f.ensembled) cfg.ensembled = *f.ensembled;
  if (f.network) cfg.network = *f.network;
  if (f.epochs) cfg.train.epochs = *f.epochs;
  if (f.batch_size) cfg.train.batch_size = *f.batch_size;
  cfg.data_root = paranasal::resolve_data_root(cfg, f.data_root);
  if (!f.out_dir.empty()) cfg.out_dir = f.out_dir;
  cfg.validate();
  return cfg;
}

std::vector<int> parse_grid(const std::vector<int>& flag, const std::array<int, 5>& fallback) {
  if (!flag.empty()) return flag;
  return std::vector<int>(fallback.begin(), fallback.end());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Volumetric sinus anomaly classification pipeline"};
  app.require_subcommand(1);

  CommonFlags flags;

  // phantom-only knobs
  int phantom_subjects = 20;
  double phantom_anomaly_prob = 0.32;
  double phantom_exclusion_prob = 0.0;
  double phantom_edge_affinity = 0.0;
  int phantom_confusers = 0;
  std::optional<int> phantom_annotated;

  // sweep-only knobs
  bool sweep_axis_wise = false;
  int sweep_fixed_n = 15, sweep_fixed_p = 35;
  std::vector<int> sweep_n_grid, sweep_p_grid;

  CLI::App* phantom = app.add_subcommand("phantom", "Generate a synthetic cohort");
  phantom->add_option("--subjects", phantom_subjects, "Cohort size")->check(CLI::PositiveNumber);
  phantom->add_option("--anomaly-prob", phantom_anomaly_prob, "Per-side lesion probability");
  phantom->add_option("--exclusion-prob", phantom_exclusion_prob,
                      "Per-side exclusion probability");
  phantom->add_option("--edge-affinity", phantom_edge_affinity,
                      "Bias lesion centers toward cavity borders (0..1)");
  phantom->add_option("--confusers", phantom_confusers,
                      "Bright clutter spheres outside the cavities");
  phantom->add_option("--annotated", phantom_annotated,
                      "Leading subjects that emit centroid annotations (default: all)");

  CLI::App* register_cmd =
      app.add_subcommand("register", "Rigidly align raw volumes to the reference");
  CLI::App* fit = app.add_subcommand("fit-centroids",
                                     "Fit per-side centroid distributions from annotations");
  CLI::App* extract = app.add_subcommand("extract", "Sample and extract instance volumes");
  CLI::App* split = app.add_subcommand("split", "Assign patient-level fold splits");
  CLI::App* train = app.add_subcommand("train", "Train one network per fold");
  CLI::App* predict = app.add_subcommand("predict", "Write per-sinus predictions per fold");
  CLI::App* evaluate = app.add_subcommand("evaluate", "Score the test split per fold");
  CLI::App* sweep = app.add_subcommand("sweep", "Cross-validate over the N/P grid");
  sweep->add_option("--n-grid", sweep_n_grid, "N values (default 1,5,10,15,20)")
      ->delimiter(',');
  sweep->add_option("--p-grid", sweep_p_grid, "P values (default 25,30,35,40,45)")
      ->delimiter(',');
  sweep->add_flag("--axis-wise", sweep_axis_wise,
                  "Sweep each knob separately at the fixed value of the other");
  sweep->add_option("--fixed-n", sweep_fixed_n, "Pinned N for the P sweep");
  sweep->add_option("--fixed-p", sweep_fixed_p, "Pinned P for the N sweep");
  CLI::App* report = app.add_subcommand("report", "Collect metrics and sweep outputs");

  for (CLI::App* cmd : {phantom, register_cmd, fit, extract, split, train, predict, evaluate,
                        sweep, report})
    add_common(cmd, flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  PipelineConfig cfg;
  try {
    cfg = resolve_config(flags);
  } catch (const std::exception& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 1;
  }

  paranasal::RunLayout layout{cfg.out_dir};
  std::ostream& log = std::cout;
  try {
    if (phantom->parsed()) {
      paranasal::PhantomSpec spec;
      spec.cohort = phantom_subjects;
      spec.lesion_probability = phantom_anomaly_prob;
      spec.exclusion_probability = phantom_exclusion_prob;
      spec.lesion_edge_affinity = phantom_edge_affinity;
      spec.confuser_count = phantom_confusers;
      spec.annotated = phantom_annotated.value_or(phantom_subjects);
      spec.seed = cfg.seed;
      spec.validate();
      paranasal::DirectoryLock lock(cfg.data_root);
      paranasal::freeze_config(cfg, std::filesystem::path(cfg.data_root) / "config.json");
      paranasal::run_phantom_stage(spec, cfg.data_root, log);
    } else if (register_cmd->parsed()) {
      paranasal::run_register_stage(cfg, cfg.data_root, layout, log);
    } else if (fit->parsed()) {
      paranasal::run_fit_centroids_stage(cfg, cfg.data_root, layout, log);
    } else if (extract->parsed()) {
      paranasal::run_extract_stage(cfg, cfg.data_root, layout, log);
    } else if (split->parsed()) {
      paranasal::run_split_stage(cfg, cfg.data_root, layout, log);
    } else if (train->parsed()) {
      paranasal::run_train_stage(cfg, layout, log);
    } else if (predict->parsed()) {
      paranasal::run_predict_stage(cfg, layout, log);
    } else if (evaluate->parsed()) {
      paranasal::MetricsReport r = paranasal::run_evaluate_stage(cfg, layout, log);
      r.render(std::cout);
    } else if (sweep->parsed()) {
      paranasal::SweepPlan plan;
      plan.n_grid = parse_grid(sweep_n_grid, paranasal::supported_sample_counts);
      plan.p_grid = parse_grid(sweep_p_grid, paranasal::supported_patch_sizes);
      plan.axis_wise = sweep_axis_wise;
      plan.fixed_n = sweep_fixed_n;
      plan.fixed_p = sweep_fixed_p;
      paranasal::run_sweep_stage(cfg, cfg.data_root, layout, plan, log);
    } else if (report->parsed()) {
      std::cout << paranasal::run_report_stage(layout, log);
    }
  } catch (const std::exception& e) {
    std::cerr << "stage failed: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
