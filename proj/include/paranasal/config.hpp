#pragma once

// Declarative pipeline configuration: JSON file, flag overrides applied
// by the CLI, environment override for the data root, and a frozen copy
// written next to every run's outputs. Unknown keys are rejected so
// typos surface before any work starts.

#include <json.hpp>

#include <algorithm>
#include <cstdlib>
#include <fcntl.h>
#include <filesystem>
#include <fstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "paranasal/core.hpp"
#include "paranasal/manifest.hpp"
#include "paranasal/nn/resnet.hpp"
#include "paranasal/nn/train.hpp"
#include "paranasal/registration.hpp"

namespace paranasal {

inline constexpr const char* data_root_env = "PARANASAL_DATA_ROOT";

struct PipelineConfig {
  std::string data_root = "data";
  std::string out_dir = "runs";
  std::uint64_t seed = 0;

  int samples_per_side = 1;     // N
  int patch_size = 35;          // P, in registered-space voxels
  int folds = 3;
  bool ensembled = true;
  double threshold = 0.5;
  std::string network = "tiny";  // "full" | "tiny"
  // Accept N / P values outside the supported grids.
  bool allow_off_grid = false;

  SplitRatios ratios;
  nn::TrainConfig train;
  RegistrationOptions registration;

  std::string annotations = "annotations.tsv";  // relative to data_root

  void validate() const {
    if (samples_per_side < 1) throw std::invalid_argument("samples_per_side must be >= 1");
    if (patch_size < 1 || patch_size > 128)
      throw std::invalid_argument("patch_size must be in [1,128]");
    if (!allow_off_grid) {
      auto in = [](const auto& grid, int v) {
        return std::find(grid.begin(), grid.end(), v) != grid.end();
      };
      if (!in(supported_sample_counts, samples_per_side))
        throw std::invalid_argument(
            "samples_per_side outside the supported grid (set allow_off_grid to override)");
      if (!in(supported_patch_sizes, patch_size))
        throw std::invalid_argument(
            "patch_size outside the supported grid (set allow_off_grid to override)");
    }
    if (folds < 2) throw std::invalid_argument("folds must be >= 2");
    if (!(threshold > 0.0 && threshold < 1.0))
      throw std::invalid_argument("threshold must be in (0,1)");
    nn::NetworkConfig::preset(network);  // throws on unknown preset
    if (train.epochs < 1 || train.batch_size < 1 || train.learning_rate <= 0)
      throw std::invalid_argument("bad training parameters");
    if (!(ratios.train > 0 && ratios.val > 0 && ratios.test > 0))
      throw std::invalid_argument("split ratios must be positive");
  }
};

inline nlohmann::json config_to_json(const PipelineConfig& c) {
  return nlohmann::json{
      {"data_root", c.data_root},
      {"out_dir", c.out_dir},
      {"seed", c.seed},
      {"samples_per_side", c.samples_per_side},
      {"patch_size", c.patch_size},
      {"folds", c.folds},
      {"ensembled", c.ensembled},
      {"threshold", c.threshold},
      {"network", c.network},
      {"allow_off_grid", c.allow_off_grid},
      {"ratios",
       {{"train", c.ratios.train}, {"val", c.ratios.val}, {"test", c.ratios.test}}},
      {"train",
       {{"epochs", c.train.epochs},
        {"batch_size", c.train.batch_size},
        {"learning_rate", c.train.learning_rate},
        {"patience", c.train.patience},
        {"lr_factor", c.train.lr_factor}}},
      {"registration",
       {{"max_iterations_per_level", c.registration.max_iterations_per_level},
        {"initial_rotation_step_deg", c.registration.initial_rotation_step_deg},
        {"initial_translation_step", c.registration.initial_translation_step}}},
      {"annotations", c.annotations}};
}

namespace detail {

template <class T>
void take(nlohmann::json& j, const char* key, T& into) {
  if (auto it = j.find(key); it != j.end()) {
    into = it->get<T>();
    j.erase(it);
  }
}

inline void reject_unknown(const nlohmann::json& j, const std::string& where) {
  if (!j.empty())
    throw std::invalid_argument("unknown configuration key '" + j.begin().key() + "' in " +
                                where);
}

}  // namespace detail

inline PipelineConfig config_from_json(nlohmann::json j) {
  PipelineConfig c;
  detail::take(j, "data_root", c.data_root);
  detail::take(j, "out_dir", c.out_dir);
  detail::take(j, "seed", c.seed);
  detail::take(j, "samples_per_side", c.samples_per_side);
  detail::take(j, "patch_size", c.patch_size);
  detail::take(j, "folds", c.folds);
  detail::take(j, "ensembled", c.ensembled);
  detail::take(j, "threshold", c.threshold);
  detail::take(j, "network", c.network);
  detail::take(j, "allow_off_grid", c.allow_off_grid);
  if (auto it = j.find("ratios"); it != j.end()) {
    nlohmann::json r = *it;
    detail::take(r, "train", c.ratios.train);
    detail::take(r, "val", c.ratios.val);
    detail::take(r, "test", c.ratios.test);
    detail::reject_unknown(r, "ratios");
    j.erase(it);
  }
  if (auto it = j.find("train"); it != j.end()) {
    nlohmann::json t = *it;
    detail::take(t, "epochs", c.train.epochs);
    detail::take(t, "batch_size", c.train.batch_size);
    detail::take(t, "learning_rate", c.train.learning_rate);
    detail::take(t, "patience", c.train.patience);
    detail::take(t, "lr_factor", c.train.lr_factor);
    detail::reject_unknown(t, "train");
    j.erase(it);
  }
  if (auto it = j.find("registration"); it != j.end()) {
    nlohmann::json r = *it;
    detail::take(r, "max_iterations_per_level", c.registration.max_iterations_per_level);
    detail::take(r, "initial_rotation_step_deg", c.registration.initial_rotation_step_deg);
    detail::take(r, "initial_translation_step", c.registration.initial_translation_step);
    detail::reject_unknown(r, "registration");
    j.erase(it);
  }
  detail::take(j, "annotations", c.annotations);
  detail::reject_unknown(j, "configuration");
  return c;
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open config: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw format_error("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(std::move(j));
}

// Audit copy of the fully resolved configuration for one run.
inline void freeze_config(const PipelineConfig& c, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot open for writing: " + path.string());
  out << config_to_json(c).dump(2) << "\n";
  if (!out) throw io_error("write failed for " + path.string());
}

// Highest precedence wins: explicit flag, then the environment, then the
// config file value.
inline std::string resolve_data_root(const PipelineConfig& c, const std::string& flag_value) {
  if (!flag_value.empty()) return flag_value;
  if (const char* env = std::getenv(data_root_env); env && *env) return env;
  return c.data_root;
}

// Exclusive advisory lock on an output directory. Creation is atomic;
// a leftover lock from a crashed run must be removed by hand.
class DirectoryLock {
 public:
  explicit DirectoryLock(const std::filesystem::path& dir) : path_(dir / ".lock") {
    std::filesystem::create_directories(dir);
    int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0)
      throw io_error("output directory is locked by another run (remove " + path_.string() +
                     " if stale)");
    ::close(fd);
  }

  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

  ~DirectoryLock() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }

 private:
  std::filesystem::path path_;
};

}  // namespace paranasal
