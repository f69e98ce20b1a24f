#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "paranasal/manifest.hpp"
#include "support.hpp"

using namespace paranasal;
using testsupport::TempDir;

namespace {

SubjectRecord subject(const std::string& id, int left, int right) {
  // left/right: -1 excluded, 0 normal, 1 anomalous
  SubjectRecord s;
  s.subject_id = id;
  auto set = [&](Side side, int v) {
    auto& st = s.side(side);
    st.included = v >= 0;
    st.label = v == 1 ? Label::anomaly : Label::normal;
  };
  set(Side::left, left);
  set(Side::right, right);
  return s;
}

// 299 subjects, 405 included sinuses, 130 anomalous (32.1%):
// 56 two-sided normal, 30 with one anomalous side, 20 with two,
// 133 one-sided normal, 60 one-sided anomalous.
Manifest cohort_405() {
  Manifest m;
  int id = 0;
  auto add = [&](int left, int right) {
    m.subjects.push_back(subject("p" + std::to_string(1000 + id++), left, right));
  };
  for (int i = 0; i < 56; ++i) add(0, 0);
  for (int i = 0; i < 30; ++i) add(i % 2, 1 - i % 2);
  for (int i = 0; i < 20; ++i) add(1, 1);
  for (int i = 0; i < 133; ++i) add(i % 2 ? 0 : -1, i % 2 ? -1 : 0);
  for (int i = 0; i < 60; ++i) add(i % 2 ? 1 : -1, i % 2 ? -1 : 1);
  return m;
}

void add_instances(Manifest& m, int n) {
  for (const auto& s : m.subjects)
    for (Side side : {Side::left, Side::right}) {
      if (!s.side(side).included) continue;
      for (int i = 0; i < n; ++i)
        m.instances.push_back(
            {s.subject_id, side, {40, 64, 64}, 35, s.side(side).label, ""});
    }
}

int split_instance_count(const Manifest& m, int fold, SplitKind split) {
  auto assign = m.fold_assignments(fold);
  int count = 0;
  for (const auto& r : m.instances)
    if (assign.at(r.subject_id) == split) ++count;
  return count;
}

}  // namespace

TEST_CASE("splits of a 405-sinus cohort match the target sizes") {
  Manifest split = make_splits(cohort_405(), SplitRatios{}, 99, 3);
  REQUIRE(split.fold_count() == 3);
  for (int fold = 0; fold < 3; ++fold) {
    int train = split.split_sinus_count(fold, SplitKind::train);
    int val = split.split_sinus_count(fold, SplitKind::val);
    int test = split.split_sinus_count(fold, SplitKind::test);
    REQUIRE(train + val + test == 405);
    REQUIRE(std::abs(train - 327) <= 2);
    REQUIRE(std::abs(val - 37) <= 2);
    REQUIRE(std::abs(test - 41) <= 2);
  }
}

TEST_CASE("each split's anomalous fraction tracks the cohort") {
  Manifest split = make_splits(cohort_405(), SplitRatios{}, 7, 3);
  for (int fold = 0; fold < 3; ++fold)
    for (SplitKind kind : {SplitKind::train, SplitKind::val, SplitKind::test}) {
      double sinuses = split.split_sinus_count(fold, kind);
      double anomalous = split.split_anomaly_count(fold, kind);
      REQUIRE(sinuses > 0);
      double fraction = anomalous / sinuses;
      REQUIRE(fraction >= 0.32 - 0.03);
      REQUIRE(fraction <= 0.32 + 0.03);
    }
}

TEST_CASE("splits never leak a patient across sets") {
  Manifest split = make_splits(cohort_405(), SplitRatios{}, 3, 3);
  std::set<std::string> eligible;
  for (const auto& s : split.subjects)
    if (s.included_count() > 0) eligible.insert(s.subject_id);
  std::vector<std::set<std::string>> test_sets, val_sets;
  for (int fold = 0; fold < 3; ++fold) {
    std::map<std::string, int> appearances;
    std::set<std::string> test_ids, val_ids;
    for (const auto& a : split.assignments)
      if (a.fold == fold) {
        appearances[a.subject_id]++;
        if (a.split == SplitKind::test) test_ids.insert(a.subject_id);
        if (a.split == SplitKind::val) val_ids.insert(a.subject_id);
      }
    REQUIRE(appearances.size() == eligible.size());
    for (const auto& [id, n] : appearances) {
      REQUIRE(n == 1);
      REQUIRE(eligible.count(id) == 1);
    }
    test_sets.push_back(test_ids);
    val_sets.push_back(val_ids);
  }
  // Test set fixed across folds; validation sets rotate without overlap.
  REQUIRE(test_sets[1] == test_sets[0]);
  REQUIRE(test_sets[2] == test_sets[0]);
  for (int a = 0; a < 3; ++a)
    for (int b = a + 1; b < 3; ++b)
      for (const auto& id : val_sets[std::size_t(a)])
        REQUIRE(val_sets[std::size_t(b)].count(id) == 0);
}

TEST_CASE("split assignment is deterministic in the seed") {
  Manifest a = make_splits(cohort_405(), SplitRatios{}, 42, 3);
  Manifest b = make_splits(cohort_405(), SplitRatios{}, 42, 3);
  REQUIRE(a.assignments.size() == b.assignments.size());
  for (std::size_t i = 0; i < a.assignments.size(); ++i) {
    REQUIRE(a.assignments[i].fold == b.assignments[i].fold);
    REQUIRE(a.assignments[i].subject_id == b.assignments[i].subject_id);
    REQUIRE(a.assignments[i].split == b.assignments[i].split);
  }
  Manifest c = make_splits(cohort_405(), SplitRatios{}, 43, 3);
  bool same = true;
  for (std::size_t i = 0; i < a.assignments.size() && same; ++i)
    same = a.assignments[i].split == c.assignments[i].split;
  REQUIRE_FALSE(same);
}

TEST_CASE("instance counts scale exactly with draws per side") {
  for (int n : {1, 5}) {
    Manifest m = cohort_405();
    add_instances(m, n);
    Manifest split = make_splits(m, SplitRatios{}, 11, 3);
    for (int fold = 0; fold < 3; ++fold)
      for (SplitKind kind : {SplitKind::train, SplitKind::val, SplitKind::test})
        REQUIRE(split_instance_count(split, fold, kind) ==
                n * split.split_sinus_count(fold, kind));
  }
}

TEST_CASE("make_splits validates its inputs") {
  Manifest m = cohort_405();
  REQUIRE_THROWS_AS(make_splits(m, {0.5, 0.25, 0.1}, 1, 3), std::invalid_argument);
  REQUIRE_THROWS_AS(make_splits(m, {0.9, 0.2, -0.1}, 1, 3), std::invalid_argument);
  REQUIRE_THROWS_AS(make_splits(m, SplitRatios{}, 1, 1), std::invalid_argument);
  Manifest tiny;
  tiny.subjects.push_back(subject("a", 0, 0));
  tiny.subjects.push_back(subject("b", 1, 0));
  REQUIRE_THROWS_AS(make_splits(tiny, SplitRatios{}, 1, 3), std::invalid_argument);
  Manifest empty;
  REQUIRE_THROWS_AS(make_splits(empty, SplitRatios{}, 1, 3), std::invalid_argument);
}

TEST_CASE("manifests round-trip through their text form") {
  TempDir dir("man");
  Manifest m = cohort_405();
  add_instances(m, 2);
  m.subjects[0].source_path = "raw/p1000.nii.gz";
  m.subjects[0].registered_path = "reg/p1000.nii.gz";
  m.instances[0].path = "inst/p1000_left_0.nii.gz";
  m.instances[0].centroid = {40.25, 63.5, 70.125};
  Manifest split = make_splits(m, SplitRatios{}, 5, 3);
  save_manifest(split, dir.file("manifest.tsv"));
  Manifest back = load_manifest(dir.file("manifest.tsv"));

  REQUIRE(back.version == split.version);
  REQUIRE(back.subjects.size() == split.subjects.size());
  for (std::size_t i = 0; i < split.subjects.size(); ++i) {
    REQUIRE(back.subjects[i].subject_id == split.subjects[i].subject_id);
    for (Side side : {Side::left, Side::right}) {
      REQUIRE(back.subjects[i].side(side).included == split.subjects[i].side(side).included);
      if (split.subjects[i].side(side).included)
        REQUIRE(back.subjects[i].side(side).label == split.subjects[i].side(side).label);
    }
    REQUIRE(back.subjects[i].source_path == split.subjects[i].source_path);
    REQUIRE(back.subjects[i].registered_path == split.subjects[i].registered_path);
  }
  REQUIRE(back.instances.size() == split.instances.size());
  REQUIRE(back.instances[0].centroid == split.instances[0].centroid);
  REQUIRE(back.instances[0].path == split.instances[0].path);
  REQUIRE(back.assignments.size() == split.assignments.size());
  for (std::size_t i = 0; i < split.assignments.size(); ++i) {
    REQUIRE(back.assignments[i].fold == split.assignments[i].fold);
    REQUIRE(back.assignments[i].subject_id == split.assignments[i].subject_id);
    REQUIRE(back.assignments[i].split == split.assignments[i].split);
  }

  REQUIRE_THROWS_AS(load_manifest(dir.file("absent.tsv")), io_error);
  {
    std::ofstream out(dir.file("bad.tsv"));
    out << "not a manifest\n";
  }
  REQUIRE_THROWS_AS(load_manifest(dir.file("bad.tsv")), format_error);
}

TEST_CASE("validation accepts a consistent manifest") {
  Manifest m = cohort_405();
  add_instances(m, 2);
  Manifest split = make_splits(m, SplitRatios{}, 5, 3);
  REQUIRE(validate_manifest(split).ok());
}

TEST_CASE("validation reports each violation class") {
  Manifest m;
  m.subjects.push_back(subject("a", 0, 1));
  m.subjects.push_back(subject("b", 0, -1));

  SECTION("orphan instance") {
    m.instances.push_back({"ghost", Side::left, {1, 2, 3}, 25, Label::normal, ""});
    auto r = validate_manifest(m);
    REQUIRE_FALSE(r.ok());
    REQUIRE(r.violations[0].find("unknown subject") != std::string::npos);
  }
  SECTION("instance on an excluded side") {
    m.instances.push_back({"b", Side::right, {1, 2, 3}, 25, Label::normal, ""});
    auto r = validate_manifest(m);
    REQUIRE_FALSE(r.ok());
    REQUIRE(r.violations[0].find("excluded side") != std::string::npos);
  }
  SECTION("label mismatch") {
    m.instances.push_back({"a", Side::right, {1, 2, 3}, 25, Label::normal, ""});
    auto r = validate_manifest(m);
    REQUIRE_FALSE(r.ok());
    REQUIRE(r.violations[0].find("disagrees") != std::string::npos);
  }
  SECTION("two splits in one fold") {
    m.assignments.push_back({0, "a", SplitKind::train});
    m.assignments.push_back({0, "a", SplitKind::test});
    auto r = validate_manifest(m);
    REQUIRE_FALSE(r.ok());
    REQUIRE(r.violations[0].find("two splits") != std::string::npos);
  }
  SECTION("duplicate subject record") {
    m.subjects.push_back(subject("a", 0, 0));
    auto r = validate_manifest(m);
    REQUIRE_FALSE(r.ok());
    REQUIRE(r.violations[0].find("duplicate subject") != std::string::npos);
  }
}
