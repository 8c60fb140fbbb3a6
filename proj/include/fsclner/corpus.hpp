#pragma once

// Column-format NER corpora, task schedules, per-stage reorganization
// (ToA/ToF for training, EoA/EoF for evaluation) and greedy K-shot sampling.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "fsclner/error.hpp"
#include "fsclner/rng.hpp"

namespace fsclner {

struct LabeledSentence {
  std::vector<std::string> tokens;
  std::vector<std::string> labels;  // "O", "B-X", "I-X"
  std::string source_id;

  bool operator==(const LabeledSentence&) const = default;
};

/// Half-open token span [start, end) carrying an entity type.
struct Span {
  std::size_t start = 0;
  std::size_t end = 0;
  std::string type;

  auto operator<=>(const Span&) const = default;
};

enum class TrainMode { ToA, ToF };
enum class EvalMode { EoA, EoF };
enum class Reorg { ToA, ToF, EoA, EoF };

inline Reorg to_reorg(TrainMode m) { return m == TrainMode::ToA ? Reorg::ToA : Reorg::ToF; }
inline Reorg to_reorg(EvalMode m) { return m == EvalMode::EoA ? Reorg::EoA : Reorg::EoF; }

inline std::string_view reorg_name(Reorg r) {
  switch (r) {
    case Reorg::ToA: return "ToA";
    case Reorg::ToF: return "ToF";
    case Reorg::EoA: return "EoA";
    case Reorg::EoF: return "EoF";
  }
  return "?";
}

struct StageDataset {
  int step = 1;
  Reorg mode = Reorg::ToA;
  std::vector<LabeledSentence> sentences;
};

/// Ordered, pairwise-disjoint entity-type sets, one per task. Steps are 1-based.
class TaskSchedule {
 public:
  TaskSchedule() = default;

  const std::vector<std::vector<std::string>>& tasks() const { return tasks_; }
  const std::string& permutation_id() const { return permutation_id_; }
  int size() const { return static_cast<int>(tasks_.size()); }

  const std::vector<std::string>& task(int t) const {
    check_step(t);
    return tasks_[static_cast<std::size_t>(t - 1)];
  }

  /// Union of E^1..E^t in schedule order.
  std::vector<std::string> seen_types(int t) const {
    check_step(t);
    std::vector<std::string> out;
    for (int i = 0; i < t; ++i) out.insert(out.end(), tasks_[i].begin(), tasks_[i].end());
    return out;
  }

  /// Union of E^1..E^{t-1}; empty for t = 1.
  std::vector<std::string> old_types(int t) const {
    if (t <= 1) return {};
    return seen_types(t - 1);
  }

  bool operator==(const TaskSchedule&) const = default;

 private:
  friend TaskSchedule build_schedule(const std::vector<std::vector<std::string>>&, std::string);

  void check_step(int t) const {
    if (t < 1 || t > size())
      throw Error(Errc::InvalidConfig, "step " + std::to_string(t) + " outside 1.." + std::to_string(size()));
  }

  std::vector<std::vector<std::string>> tasks_;
  std::string permutation_id_;
};

inline TaskSchedule build_schedule(const std::vector<std::vector<std::string>>& tasks,
                                   std::string permutation_id = {}) {
  std::set<std::string> seen;
  for (const auto& task : tasks) {
    if (task.empty()) throw Error(Errc::EmptyTask, "task type set is empty");
    for (const auto& type : task) {
      if (!seen.insert(type).second)
        throw Error(Errc::DisjointnessViolation, "type " + type + " appears in more than one task");
    }
  }
  TaskSchedule s;
  s.tasks_ = tasks;
  s.permutation_id_ = std::move(permutation_id);
  return s;
}

// ---------------------------------------------------------------------------
// Tags

/// Entity type referenced by a tag: "" for O, "X" for B-X / I-X / bare X.
inline std::string_view label_type(std::string_view label) {
  if (label == "O") return {};
  if (label.size() > 2 && (label[0] == 'B' || label[0] == 'I') && label[1] == '-') return label.substr(2);
  return label;
}

inline bool is_bio_tag(std::string_view tag) {
  if (tag == "O") return true;
  return tag.size() > 2 && (tag[0] == 'B' || tag[0] == 'I') && tag[1] == '-';
}

/// Rewrites IOB1 (I-X may open a mention) into IOB2 in place.
inline void normalize_bio(std::vector<std::string>& labels) {
  std::string_view prev;
  for (auto& l : labels) {
    const std::string_view type = label_type(l);
    if (!type.empty() && l[0] == 'I' && prev != type) l[0] = 'B';
    prev = type;
  }
}

/// Mentions encoded by a BIO (IOB2) label sequence, in token order.
inline std::vector<Span> spans_from_bio(const std::vector<std::string>& labels) {
  std::vector<Span> out;
  std::size_t i = 0;
  while (i < labels.size()) {
    const std::string_view type = label_type(labels[i]);
    if (type.empty()) {
      ++i;
      continue;
    }
    std::size_t j = i + 1;
    while (j < labels.size() && labels[j].size() > 2 && labels[j][0] == 'I' && label_type(labels[j]) == type) ++j;
    out.push_back({i, j, std::string(type)});
    i = j;
  }
  return out;
}

inline std::map<std::string, std::size_t> mention_counts(const std::vector<LabeledSentence>& sentences) {
  std::map<std::string, std::size_t> counts;
  for (const auto& s : sentences)
    for (const auto& span : spans_from_bio(s.labels)) ++counts[span.type];
  return counts;
}

// ---------------------------------------------------------------------------
// CoNLL column format

inline std::vector<LabeledSentence> parse_conll(std::istream& in, const std::string& source = "conll") {
  std::vector<LabeledSentence> out;
  LabeledSentence cur;
  std::string line;
  std::size_t line_no = 0;
  auto flush = [&] {
    if (!cur.tokens.empty()) {
      normalize_bio(cur.labels);
      cur.source_id = source + ":" + std::to_string(out.size());
      out.push_back(std::move(cur));
    }
    cur = LabeledSentence{};
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream fields(line);
    std::vector<std::string> cols;
    for (std::string c; fields >> c;) cols.push_back(std::move(c));
    if (cols.empty()) {
      flush();
      continue;
    }
    if (cols.front().starts_with("-DOCSTART-")) {
      flush();
      continue;
    }
    const std::string& tag = cols.back();
    if (cols.size() < 2 || !is_bio_tag(tag))
      throw Error(Errc::MalformedTag, source + " line " + std::to_string(line_no) + ": bad tag '" + tag + "'");
    cur.tokens.push_back(cols.front());
    cur.labels.push_back(tag);
  }
  flush();
  if (out.empty()) throw Error(Errc::EmptyCorpus, source + " contains no sentences");
  return out;
}

inline std::vector<LabeledSentence> parse_conll_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, "cannot open " + path);
  return parse_conll(in, path);
}

inline void serialize_conll(const std::vector<LabeledSentence>& sentences, std::ostream& out) {
  for (const auto& s : sentences) {
    for (std::size_t i = 0; i < s.tokens.size(); ++i) out << s.tokens[i] << ' ' << s.labels[i] << '\n';
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Reorganization

inline bool mentions_any(const LabeledSentence& s, const std::set<std::string>& types) {
  for (const auto& l : s.labels) {
    const auto type = label_type(l);
    if (!type.empty() && types.count(std::string(type))) return true;
  }
  return false;
}

/// Copy of `s` with every mention of a type outside `keep` rewritten to O.
inline LabeledSentence mask_to(const LabeledSentence& s, const std::set<std::string>& keep) {
  LabeledSentence out = s;
  for (auto& l : out.labels) {
    const auto type = label_type(l);
    if (!type.empty() && !keep.count(std::string(type))) l = "O";
  }
  return out;
}

namespace detail {

inline StageDataset reorganize(const std::vector<LabeledSentence>& sentences, const std::set<std::string>& keep,
                               bool filter, int t, Reorg mode) {
  StageDataset ds{t, mode, {}};
  for (const auto& s : sentences) {
    if (filter && !mentions_any(s, keep)) continue;
    ds.sentences.push_back(mask_to(s, keep));
  }
  return ds;
}

}  // namespace detail

inline StageDataset reorganize_train(const std::vector<LabeledSentence>& sentences, const TaskSchedule& schedule,
                                     int t, TrainMode mode) {
  const auto& task = schedule.task(t);
  return detail::reorganize(sentences, {task.begin(), task.end()}, mode == TrainMode::ToF, t, to_reorg(mode));
}

// Under EoF, sentences mixing seen and unseen types are kept with the unseen
// mentions rewritten to O.
inline StageDataset build_eval(const std::vector<LabeledSentence>& sentences, const TaskSchedule& schedule, int t,
                               EvalMode mode) {
  const auto seen = schedule.seen_types(t);
  return detail::reorganize(sentences, {seen.begin(), seen.end()}, mode == EvalMode::EoF, t, to_reorg(mode));
}

// ---------------------------------------------------------------------------
// Greedy K-shot sampling

/// Selects sentences until every requested type has at least K mentions.
/// Types are served in ascending pool frequency (ties by name); for the type
/// being served, an unused sentence containing it is drawn uniformly at random
/// and the running counts of all requested types are updated.
inline std::vector<LabeledSentence> greedy_sample(const std::vector<LabeledSentence>& sentences,
                                                  const std::vector<std::string>& types, std::size_t k,
                                                  std::uint64_t seed) {
  if (k == 0) throw Error(Errc::InvalidConfig, "K must be at least 1");
  const std::size_t n_types = types.size();
  std::map<std::string, std::size_t> type_index;
  for (std::size_t i = 0; i < n_types; ++i) type_index.emplace(types[i], i);

  // per-sentence mention counts for the requested types
  std::vector<std::vector<std::size_t>> per_sentence(sentences.size(), std::vector<std::size_t>(n_types, 0));
  std::vector<std::size_t> pool_total(n_types, 0);
  for (std::size_t s = 0; s < sentences.size(); ++s) {
    for (const auto& span : spans_from_bio(sentences[s].labels)) {
      auto it = type_index.find(span.type);
      if (it == type_index.end()) continue;
      ++per_sentence[s][it->second];
      ++pool_total[it->second];
    }
  }
  for (std::size_t i = 0; i < n_types; ++i) {
    if (pool_total[i] < k)
      throw Error(Errc::InsufficientSupport, "type " + types[i] + " has " + std::to_string(pool_total[i]) +
                                                 " mentions, need " + std::to_string(k));
  }

  std::vector<std::size_t> order(n_types);
  for (std::size_t i = 0; i < n_types; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (pool_total[a] != pool_total[b]) return pool_total[a] < pool_total[b];
    return types[a] < types[b];
  });

  Rng rng(seed);
  std::vector<bool> used(sentences.size(), false);
  std::vector<std::size_t> have(n_types, 0);
  std::vector<LabeledSentence> out;
  for (std::size_t ti : order) {
    while (have[ti] < k) {
      std::vector<std::size_t> candidates;
      for (std::size_t s = 0; s < sentences.size(); ++s)
        if (!used[s] && per_sentence[s][ti] > 0) candidates.push_back(s);
      const std::size_t pick = candidates[rng.uniform_index(candidates.size())];
      used[pick] = true;
      for (std::size_t j = 0; j < n_types; ++j) have[j] += per_sentence[pick][j];
      out.push_back(sentences[pick]);
    }
  }
  return out;
}

}  // namespace fsclner
