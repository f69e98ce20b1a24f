#pragma once

// The manifest binds subjects, per-side labels, extracted instances, and
// per-fold split assignments. Splits are patient-level and stratified so
// each split's anomalous sinus fraction tracks the cohort's.

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "paranasal/core.hpp"
#include "paranasal/sampling.hpp"

namespace paranasal {

enum class SplitKind { train = 0, val = 1, test = 2 };

inline const char* to_string(SplitKind s) {
  switch (s) {
    case SplitKind::train: return "train";
    case SplitKind::val: return "val";
    default: return "test";
  }
}

inline SplitKind split_from_string(std::string_view s) {
  if (s == "train") return SplitKind::train;
  if (s == "val") return SplitKind::val;
  if (s == "test") return SplitKind::test;
  throw format_error("unknown split: '" + std::string(s) + "'");
}

struct SubjectRecord {
  struct SideState {
    bool included = false;
    Label label = Label::normal;
  };

  std::string subject_id;
  std::array<SideState, 2> sides{};  // indexed by Side
  std::string source_path;      // "-" when not recorded
  std::string registered_path;  // "-" when not recorded

  SideState& side(Side s) { return sides[std::size_t(s)]; }
  const SideState& side(Side s) const { return sides[std::size_t(s)]; }
  int included_count() const { return int(sides[0].included) + int(sides[1].included); }
  int anomaly_count() const {
    int n = 0;
    for (const auto& st : sides) n += st.included && st.label == Label::anomaly;
    return n;
  }
};

struct InstanceRow {
  std::string subject_id;
  Side side = Side::left;
  std::array<double, 3> centroid{};
  int patch_size = 0;
  Label label = Label::normal;
  std::string path;  // instance volume, relative to the data root
};

struct AssignmentRow {
  int fold = 0;
  std::string subject_id;
  SplitKind split = SplitKind::train;
};

struct Manifest {
  int version = 1;
  std::vector<SubjectRecord> subjects;
  std::vector<InstanceRow> instances;
  std::vector<AssignmentRow> assignments;

  const SubjectRecord* find_subject(std::string_view id) const {
    for (const auto& s : subjects)
      if (s.subject_id == id) return &s;
    return nullptr;
  }

  int fold_count() const {
    int n = 0;
    for (const auto& a : assignments) n = std::max(n, a.fold + 1);
    return n;
  }

  // Subject -> split for one fold.
  std::map<std::string, SplitKind> fold_assignments(int fold) const {
    std::map<std::string, SplitKind> out;
    for (const auto& a : assignments)
      if (a.fold == fold) out[a.subject_id] = a.split;
    return out;
  }

  // Number of included sinuses assigned to `split` in `fold`.
  int split_sinus_count(int fold, SplitKind split) const {
    int n = 0;
    for (const auto& a : assignments)
      if (a.fold == fold && a.split == split)
        if (const SubjectRecord* s = find_subject(a.subject_id)) n += s->included_count();
    return n;
  }

  int split_anomaly_count(int fold, SplitKind split) const {
    int n = 0;
    for (const auto& a : assignments)
      if (a.fold == fold && a.split == split)
        if (const SubjectRecord* s = find_subject(a.subject_id)) n += s->anomaly_count();
    return n;
  }
};

inline void save_manifest(const Manifest& m, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot open for writing: " + path.string());
  out.precision(17);
  out << "# paranasal manifest v" << m.version << "\n";
  out << "[subjects]\n";
  out << "subject_id\tleft_included\tleft_label\tright_included\tright_label\tsource_path\tregistered_path\n";
  auto path_or_dash = [](const std::string& p) { return p.empty() ? std::string("-") : p; };
  for (const auto& s : m.subjects) {
    out << s.subject_id;
    for (Side side : {Side::left, Side::right}) {
      const auto& st = s.side(side);
      out << '\t' << int(st.included) << '\t' << (st.included ? to_string(st.label) : "-");
    }
    out << '\t' << path_or_dash(s.source_path) << '\t' << path_or_dash(s.registered_path)
        << '\n';
  }
  out << "[instances]\n";
  out << "subject_id\tside\tx\ty\tz\tpatch_size\tlabel\tpath\n";
  for (const auto& r : m.instances)
    out << r.subject_id << '\t' << to_string(r.side) << '\t' << r.centroid[0] << '\t'
        << r.centroid[1] << '\t' << r.centroid[2] << '\t' << r.patch_size << '\t'
        << to_string(r.label) << '\t' << path_or_dash(r.path) << '\n';
  out << "[assignments]\n";
  out << "fold\tsubject_id\tsplit\n";
  for (const auto& a : m.assignments)
    out << a.fold << '\t' << a.subject_id << '\t' << to_string(a.split) << '\n';
  if (!out) throw io_error("failed writing: " + path.string());
}

inline Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open: " + path.string());
  Manifest m;
  std::string line;
  if (!std::getline(in, line) || !line.starts_with("# paranasal manifest v"))
    throw format_error("missing manifest header: " + path.string());
  m.version = std::stoi(line.substr(std::string("# paranasal manifest v").size()));
  if (m.version != 1)
    throw format_error("unsupported manifest version " + std::to_string(m.version));

  enum class Section { none, subjects, instances, assignments };
  Section section = Section::none;
  auto undash = [](const std::string& s) { return s == "-" ? std::string() : s; };
  while (std::getline(in, line)) {
    auto fields = split_fields(line);
    if (fields.empty() || fields[0].starts_with("#")) continue;
    if (fields[0] == "[subjects]") {
      section = Section::subjects;
      continue;
    }
    if (fields[0] == "[instances]") {
      section = Section::instances;
      continue;
    }
    if (fields[0] == "[assignments]") {
      section = Section::assignments;
      continue;
    }
    if (fields[0] == "subject_id" || fields[0] == "fold") continue;  // column headers
    switch (section) {
      case Section::subjects: {
        if (fields.size() != 7) throw format_error("bad subject row: '" + line + "'");
        SubjectRecord s;
        s.subject_id = fields[0];
        int f = 1;
        for (Side side : {Side::left, Side::right}) {
          auto& st = s.side(side);
          st.included = fields[std::size_t(f)] == "1";
          if (!st.included && fields[std::size_t(f)] != "0")
            throw format_error("bad inclusion flag: '" + line + "'");
          if (st.included) st.label = label_from_string(fields[std::size_t(f + 1)]);
          f += 2;
        }
        s.source_path = undash(fields[5]);
        s.registered_path = undash(fields[6]);
        m.subjects.push_back(std::move(s));
        break;
      }
      case Section::instances: {
        if (fields.size() != 8) throw format_error("bad instance row: '" + line + "'");
        InstanceRow r;
        r.subject_id = fields[0];
        r.side = side_from_string(fields[1]);
        for (int i = 0; i < 3; ++i) r.centroid[std::size_t(i)] = std::stod(fields[std::size_t(2 + i)]);
        r.patch_size = std::stoi(fields[5]);
        r.label = label_from_string(fields[6]);
        r.path = undash(fields[7]);
        m.instances.push_back(std::move(r));
        break;
      }
      case Section::assignments: {
        if (fields.size() != 3) throw format_error("bad assignment row: '" + line + "'");
        m.assignments.push_back({std::stoi(fields[0]), fields[1], split_from_string(fields[2])});
        break;
      }
      case Section::none:
        throw format_error("row outside any section: '" + line + "'");
    }
  }
  return m;
}

struct SplitRatios {
  double train = 0.807;
  double val = 0.091;
  double test = 0.102;
};

namespace detail {

// A stratum groups subjects with identical (included sinus count, anomalous
// sinus count), so members are interchangeable for quota purposes.
struct Stratum {
  int weight = 0;  // sinuses per subject in this stratum
  std::vector<std::string> order;  // deterministic shuffled subject ids
};

using StrataMap = std::map<std::pair<int, int>, Stratum>;

// Draw subjects from `avail` (per-stratum candidate lists) until their sinus
// weight reaches `quota`, keeping every stratum's take proportional to its
// share. Largest-remainder apportionment; the final pick may overshoot the
// quota by at most one sinus.
inline std::set<std::string> take_quota(
    const std::map<std::pair<int, int>, std::vector<std::string>>& avail,
    const StrataMap& strata, long quota) {
  long pool_weight = 0;
  for (const auto& [key, ids] : avail) pool_weight += long(ids.size()) * strata.at(key).weight;
  if (quota > pool_weight)
    throw std::invalid_argument("strata too small to populate every split");

  struct State {
    std::pair<int, int> key;
    long taken = 0;
    long cap = 0;
    int weight = 0;
    double remainder = 0;
  };
  std::vector<State> st;
  long total = 0;
  for (const auto& [key, ids] : avail) {
    State s;
    s.key = key;
    s.cap = long(ids.size());
    s.weight = strata.at(key).weight;
    double ideal = pool_weight > 0 ? double(quota) * double(ids.size()) / double(pool_weight) : 0;
    s.taken = long(ideal);
    if (s.taken > s.cap) s.taken = s.cap;
    s.remainder = ideal - double(s.taken);
    total += s.taken * s.weight;
    st.push_back(s);
  }
  while (total < quota) {
    State* best = nullptr;
    for (auto& s : st)
      if (s.taken < s.cap && (!best || s.remainder > best->remainder)) best = &s;
    if (!best) break;
    best->taken += 1;
    best->remainder -= 1.0;
    total += best->weight;
  }

  std::set<std::string> out;
  for (const auto& s : st) {
    const auto& ids = avail.at(s.key);
    for (long i = 0; i < s.taken; ++i) out.insert(ids[std::size_t(i)]);
  }
  return out;
}

}  // namespace detail

// Patient-level stratified splits. The test set is fixed across folds; the
// remaining pool is partitioned into `folds` stratified groups and fold k
// draws its validation set from group k, so validation sets never overlap
// across folds and train/val/test sizes match the ratios in every fold.
inline Manifest make_splits(const Manifest& in, SplitRatios ratios, std::uint64_t seed,
                            int folds = 3) {
  if (!(ratios.train > 0 && ratios.val > 0 && ratios.test > 0))
    throw std::invalid_argument("split ratios must be positive");
  if (std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9)
    throw std::invalid_argument("split ratios must sum to 1");
  if (folds < 2) throw std::invalid_argument("need at least 2 folds");

  Rng rng(seed);

  // Build strata over subjects with at least one included sinus.
  detail::StrataMap strata;
  long total_weight = 0;
  for (const auto& s : in.subjects) {
    int w = s.included_count();
    if (w == 0) continue;
    auto key = std::make_pair(w, s.anomaly_count());
    strata[key].weight = w;
    strata[key].order.push_back(s.subject_id);
    total_weight += w;
  }
  if (total_weight == 0) throw std::invalid_argument("no included sinuses in manifest");
  for (auto& [key, stratum] : strata) {
    std::sort(stratum.order.begin(), stratum.order.end());
    Rng sr = rng.derive("stratum").derive(std::to_string(key.first) + "a" +
                                          std::to_string(key.second));
    sr.shuffle(stratum.order);
  }

  long test_quota = std::lround(ratios.test * double(total_weight));
  long val_quota = std::lround(ratios.val * double(total_weight));
  if (test_quota < 1 || val_quota < 1)
    throw std::invalid_argument("cohort too small for the requested ratios");

  std::map<std::pair<int, int>, std::vector<std::string>> all;
  for (const auto& [key, stratum] : strata) all[key] = stratum.order;
  std::set<std::string> test_ids = detail::take_quota(all, strata, test_quota);

  // Round-robin the pool remainder of each stratum into fold groups.
  std::vector<std::map<std::pair<int, int>, std::vector<std::string>>> groups(
      static_cast<std::size_t>(folds));
  for (const auto& [key, stratum] : strata) {
    int g = 0;
    for (const auto& id : stratum.order) {
      if (test_ids.count(id)) continue;
      groups[std::size_t(g)][key].push_back(id);
      g = (g + 1) % folds;
    }
  }

  Manifest out = in;
  out.assignments.clear();
  for (int fold = 0; fold < folds; ++fold) {
    std::set<std::string> val_ids =
        detail::take_quota(groups[std::size_t(fold)], strata, val_quota);
    for (const auto& [key, stratum] : strata)
      for (const auto& id : stratum.order) {
        SplitKind split = test_ids.count(id)  ? SplitKind::test
                          : val_ids.count(id) ? SplitKind::val
                                              : SplitKind::train;
        out.assignments.push_back({fold, id, split});
      }
  }
  std::sort(out.assignments.begin(), out.assignments.end(), [](const auto& a, const auto& b) {
    return std::tie(a.fold, a.subject_id) < std::tie(b.fold, b.subject_id);
  });
  return out;
}

struct ValidationReport {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
};

// Checks referential integrity, label consistency, and patient-level split
// exclusivity. Violations are reported, never thrown.
inline ValidationReport validate_manifest(const Manifest& m) {
  ValidationReport report;
  auto flag = [&](const std::string& v) { report.violations.push_back(v); };

  std::map<std::string, const SubjectRecord*> by_id;
  for (const auto& s : m.subjects) {
    if (!by_id.emplace(s.subject_id, &s).second)
      flag("duplicate subject record: " + s.subject_id);
  }

  for (const auto& r : m.instances) {
    auto it = by_id.find(r.subject_id);
    if (it == by_id.end()) {
      flag("instance references unknown subject: " + r.subject_id);
      continue;
    }
    const auto& st = it->second->side(r.side);
    if (!st.included)
      flag("instance on excluded side: " + r.subject_id + "/" + to_string(r.side));
    else if (st.label != r.label)
      flag("instance label disagrees with subject record: " + r.subject_id + "/" +
           to_string(r.side));
  }

  std::map<std::pair<int, std::string>, SplitKind> seen;
  for (const auto& a : m.assignments) {
    if (!by_id.count(a.subject_id))
      flag("assignment references unknown subject: " + a.subject_id);
    auto key = std::make_pair(a.fold, a.subject_id);
    auto [it, inserted] = seen.emplace(key, a.split);
    if (!inserted && it->second != a.split)
      flag("subject assigned to two splits in fold " + std::to_string(a.fold) + ": " +
           a.subject_id);
  }
  return report;
}

}  // namespace paranasal
