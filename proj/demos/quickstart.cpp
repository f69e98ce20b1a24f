// Minimal end-to-end tour of the library, no files on disk: generate a
// small synthetic cohort, fit the per-side centroid model, draw stochastic
// instances, train the tiny 3D residual network with 3-fold
// cross-validation, and print pooled per-sinus metrics.
//
// The command-line tool (tools/paranasal.cpp) runs the same stages against
// real directories; this program shows the library calls behind them.

#include <cstdio>
#include <iostream>
#include <unordered_map>

#include "paranasal/eval.hpp"
#include "paranasal/manifest.hpp"
#include "paranasal/phantom.hpp"
#include "paranasal/sampling.hpp"

using namespace paranasal;

namespace {

// Serves instance volumes straight from memory; the pipeline's file-backed
// provider does the same against an instance directory.
class MemoryProvider : public InstanceProvider {
 public:
  std::unordered_map<std::string, Volume> store;
  Volume fetch(const InstanceRow& row) const override { return store.at(row.path); }
};

}  // namespace

int main() {
  // 1. A deterministic synthetic cohort with known labels. Half the sinuses
  //    carry a bright lesion; volumes come out already aligned, so this demo
  //    skips rigid registration (see register_rigid for that step).
  PhantomSpec spec;
  spec.cohort = 16;
  spec.annotated = 16;
  spec.perturb = false;
  spec.lesion_probability = 0.5;
  spec.seed = 7;

  std::vector<SubjectRecord> subjects;
  std::vector<CentroidAnnotation> annotations;
  std::vector<Volume> volumes;
  for (int i = 0; i < spec.cohort; ++i) {
    PhantomSubject subject = generate_subject(spec, i, /*with_raw=*/false);
    SubjectRecord rec;
    rec.subject_id = subject.truth.subject_id;
    rec.source_path = rec.registered_path = "-";
    for (Side side : {Side::left, Side::right}) {
      const auto& sinus = subject.truth.sinus(side);
      rec.side(side).included = sinus.included;
      rec.side(side).label = sinus.label;
      annotations.push_back({rec.subject_id, side, sinus.centroid});
    }
    subjects.push_back(rec);
    volumes.push_back(std::move(subject.registered));
  }

  // 2. Per-side Gaussian centroid model from the annotations.
  CentroidModel model = fit_centroid_model(annotations);
  std::printf("left centroid model: mean (%.1f, %.1f, %.1f), std (%.2f, %.2f, %.2f)\n",
              model.left.mean[0], model.left.mean[1], model.left.mean[2],
              model.left.stddev[0], model.left.stddev[1], model.left.stddev[2]);

  // 3. Three stochastic 35-voxel crops per side, flipped on the right side
  //    and resampled to the fixed 64-cube network input.
  const int draws = 3, patch = 35;
  const std::uint64_t seed = 1;
  Manifest manifest;
  manifest.subjects = subjects;
  MemoryProvider provider;
  for (std::size_t si = 0; si < subjects.size(); ++si)
    for (Side side : {Side::left, Side::right}) {
      auto centroids = sample_centroids(model, side, draws,
                                        side_stream_seed(seed, subjects[si].subject_id, side));
      for (int k = 0; k < draws; ++k) {
        Instance inst = extract_instance(volumes[si], subjects[si].subject_id,
                                         centroids[std::size_t(k)], patch, side);
        InstanceRow row;
        row.subject_id = subjects[si].subject_id;
        row.side = side;
        row.centroid = centroids[std::size_t(k)];
        row.patch_size = patch;
        row.label = subjects[si].side(side).label;
        row.path = row.subject_id + "-" + std::string(to_string(side)) + "-" +
                   std::to_string(k);
        provider.store[row.path] = std::move(inst.data);
        manifest.instances.push_back(row);
      }
    }

  // 4. Patient-level stratified splits: fixed test subjects, validation
  //    rotating across 3 folds.
  manifest = make_splits(manifest, SplitRatios{}, seed, 3);

  // 5. Train the tiny preset per fold and pool instance probabilities per
  //    (subject, side) at evaluation time.
  CrossValSetup setup;
  setup.network = nn::NetworkConfig::preset("tiny");
  setup.train.epochs = 2;
  setup.train.batch_size = 8;
  setup.train.learning_rate = 1e-3;
  setup.eval.ensembled = true;
  setup.seed = seed;
  std::cout << "training 3 folds (tiny network, 2 epochs each)...\n";
  CrossValResult result = cross_validate(manifest, provider, setup);

  result.report.render(std::cout);
  return 0;
}
