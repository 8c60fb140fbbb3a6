#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "fsclner/anchor_vocab.hpp"
#include "fsclner/corpus.hpp"
#include "fsclner/error.hpp"
#include "fsclner/matrix.hpp"
#include "fsclner/model.hpp"
#include "fsclner/tokenizer.hpp"

namespace fsclner {

/// How a token is declared O.
///  OwnToken: the token's own input id competes with every registered anchor.
///  GlobalArgmax: O unless the argmax over the whole output row is an anchor.
enum class DecodeRule { OwnToken, GlobalArgmax };

struct TypeScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;  // gold mentions
  std::size_t tp = 0, fp = 0, fn = 0;

  bool operator==(const TypeScores&) const = default;
};

struct StepMetrics {
  int step = 0;
  Reorg eval_mode = Reorg::EoA;
  std::map<std::string, TypeScores> per_type;
  std::vector<std::string> scored_types;  // types entering the macro mean
  double macro_f1 = 0.0;
  std::size_t sentences = 0;
  std::uint64_t forward_passes = 0;

  bool operator==(const StepMetrics&) const = default;
};

/// One label per token: an entity type or "O". Ties resolve to O.
inline std::vector<std::string> decode(const Matrix& logits, const AnchorVocabulary& vocab,
                                       std::span<const int> input_ids, DecodeRule rule = DecodeRule::OwnToken) {
  if (logits.cols() < static_cast<Eigen::Index>(vocab.total_size()))
    throw Error(Errc::SupportMismatch, "logits do not cover the extended vocabulary");
  std::vector<std::string> out(static_cast<std::size_t>(logits.rows()), "O");
  const auto base = static_cast<Eigen::Index>(vocab.base_size());
  const auto n_anchor = static_cast<Eigen::Index>(vocab.size());
  for (Eigen::Index j = 0; j < logits.rows(); ++j) {
    if (n_anchor == 0) break;
    Eigen::Index best = 0;
    const double best_anchor = logits.row(j).segment(base, n_anchor).maxCoeff(&best);
    double rival;
    if (rule == DecodeRule::OwnToken) {
      rival = logits(j, input_ids[static_cast<std::size_t>(j)]);
    } else {
      rival = logits.row(j).head(base).maxCoeff();
      if (logits.cols() > base + n_anchor) rival = std::max(rival, logits.row(j).tail(logits.cols() - base - n_anchor).maxCoeff());
    }
    if (best_anchor > rival) out[static_cast<std::size_t>(j)] = vocab.record(static_cast<std::size_t>(best)).entity_type;
  }
  return out;
}

/// Classifier-head decoding: column 0 is O, column i is the i-th anchor record's type.
inline std::vector<std::string> decode_classifier(const Matrix& logits, const AnchorVocabulary& vocab) {
  std::vector<std::string> out(static_cast<std::size_t>(logits.rows()), "O");
  for (Eigen::Index j = 0; j < logits.rows(); ++j) {
    Eigen::Index best = 0;
    const double m = logits.row(j).maxCoeff(&best);
    if (best > 0 && m > logits(j, 0)) out[static_cast<std::size_t>(j)] = vocab.record(static_cast<std::size_t>(best - 1)).entity_type;
  }
  return out;
}

/// Maximal runs of one non-O type.
inline std::vector<Span> extract_spans(const std::vector<std::string>& labels) {
  std::vector<Span> out;
  std::size_t i = 0;
  while (i < labels.size()) {
    if (labels[i] == "O") {
      ++i;
      continue;
    }
    std::size_t j = i + 1;
    while (j < labels.size() && labels[j] == labels[i]) ++j;
    out.push_back({i, j, labels[i]});
    i = j;
  }
  return out;
}

struct MacroOptions {
  bool include_empty_types = false;  // score types with no gold and no predictions as 0
};

/// Exact-match span scoring. Element i of `pred` and `gold` belongs to sentence i.
inline StepMetrics macro_f1(const std::vector<std::vector<Span>>& pred, const std::vector<std::vector<Span>>& gold,
                            const std::vector<std::string>& seen_types, MacroOptions opts = {}) {
  if (pred.size() != gold.size()) throw Error(Errc::DimensionMismatch, "prediction/gold sentence counts differ");
  StepMetrics m;
  m.sentences = gold.size();
  for (const auto& t : seen_types) m.per_type[t];
  auto check = [&](const Span& s) {
    if (!m.per_type.count(s.type)) throw Error(Errc::UnknownType, "span of unseen type " + s.type);
  };
  for (std::size_t i = 0; i < gold.size(); ++i) {
    std::set<Span> g(gold[i].begin(), gold[i].end());
    std::set<Span> p(pred[i].begin(), pred[i].end());
    for (const auto& s : g) {
      check(s);
      auto& ts = m.per_type[s.type];
      ++ts.support;
      if (p.count(s)) ++ts.tp;
      else ++ts.fn;
    }
    for (const auto& s : p) {
      check(s);
      if (!g.count(s)) ++m.per_type[s.type].fp;
    }
  }
  double sum = 0.0;
  for (const auto& type : seen_types) {
    auto& ts = m.per_type[type];
    ts.precision = ts.tp + ts.fp ? static_cast<double>(ts.tp) / static_cast<double>(ts.tp + ts.fp) : 0.0;
    ts.recall = ts.tp + ts.fn ? static_cast<double>(ts.tp) / static_cast<double>(ts.tp + ts.fn) : 0.0;
    ts.f1 = ts.precision + ts.recall > 0.0 ? 2.0 * ts.precision * ts.recall / (ts.precision + ts.recall) : 0.0;
    const bool empty = ts.support == 0 && ts.fp == 0;
    if (empty && !opts.include_empty_types) continue;
    m.scored_types.push_back(type);
    sum += ts.f1;
  }
  m.macro_f1 = m.scored_types.empty() ? 0.0 : sum / static_cast<double>(m.scored_types.size());
  return m;
}

/// Mean macro-F1 over the incremental steps 2..T.
inline double avg_ge2(const std::vector<double>& macro_per_step) {
  if (macro_per_step.size() < 2) throw Error(Errc::TooFewSteps, "Avg>=2 needs at least two steps");
  double s = 0.0;
  for (std::size_t i = 1; i < macro_per_step.size(); ++i) s += macro_per_step[i];
  return s / static_cast<double>(macro_per_step.size() - 1);
}

struct EvalOptions {
  DecodeRule decode_rule = DecodeRule::OwnToken;
  MacroOptions macro;
};

/// Decodes every sentence with exactly one forward pass and scores the step.
/// When `dump` is given, writes "source_id TAB token TAB gold TAB pred" lines.
template <SequenceEncoder M>
StepMetrics evaluate_stage(const M& model, const AnchorVocabulary& vocab, const WordTokenizer& tokenizer,
                           const StageDataset& data, const std::vector<std::string>& seen_types,
                           const EvalOptions& opts = {}, std::ostream* dump = nullptr) {
  std::vector<std::vector<Span>> pred, gold;
  pred.reserve(data.sentences.size());
  gold.reserve(data.sentences.size());
  const std::uint64_t calls_before = model.forward_calls();
  for (const auto& s : data.sentences) {
    const std::vector<int> ids = tokenizer.encode(s.tokens);
    const Matrix logits = model.forward(ids);
    const auto labels = model.head_mode() == HeadMode::Anchor ? decode(logits, vocab, ids, opts.decode_rule)
                                                              : decode_classifier(logits, vocab);
    pred.push_back(extract_spans(labels));
    gold.push_back(spans_from_bio(s.labels));
    if (dump) {
      for (std::size_t j = 0; j < s.tokens.size(); ++j) {
        const auto g = label_type(s.labels[j]);
        *dump << s.source_id << '\t' << s.tokens[j] << '\t' << (g.empty() ? "O" : std::string(g)) << '\t'
              << labels[j] << '\n';
      }
    }
  }
  StepMetrics m = macro_f1(pred, gold, seen_types, opts.macro);
  m.step = data.step;
  m.eval_mode = data.mode;
  m.forward_passes = model.forward_calls() - calls_before;
  return m;
}

}  // namespace fsclner
