#include <gtest/gtest.h>

#include <algorithm>
#include <sstream>

#include "fsclner/evaluate.hpp"
#include "fsclner/rng.hpp"

using namespace fsclner;

namespace {

AnchorVocabulary vocab5() {
  const RepWordTable t{{"A-PER", {"p"}}, {"A-LOC", {"l"}}};
  return register_task(AnchorVocabulary(5), {"PER", "LOC"}, t, 1);
}

std::vector<std::string> paint(std::size_t n, const std::vector<Span>& spans) {
  std::vector<std::string> l(n, "O");
  for (const auto& s : spans)
    for (std::size_t i = s.start; i < s.end; ++i) l[i] = s.type;
  return l;
}

}  // namespace

TEST(Decode, AnchorWinsOwnTokenWinsTieGoesToO) {
  const auto v = vocab5();  // ids 5 = A-PER, 6 = A-LOC
  Matrix z = Matrix::Zero(3, 7);
  z(0, 6) = 3.0;  // A-LOC global max
  z(0, 2) = 1.0;
  z(1, 3) = 2.0;  // own token 3 beats anchors
  z(1, 5) = 1.5;
  z(2, 4) = 1.0;  // exact tie own token vs A-PER
  z(2, 5) = 1.0;
  const std::vector<int> ids{2, 3, 4};
  EXPECT_EQ(decode(z, v, ids), (std::vector<std::string>{"LOC", "O", "O"}));
}

TEST(Decode, OwnTokenVersusGlobalArgmax) {
  const auto v = vocab5();
  Matrix z = Matrix::Zero(1, 7);
  z(0, 1) = 5.0;  // some other word dominates
  z(0, 5) = 2.0;  // A-PER beats own token 3
  const std::vector<int> ids{3};
  EXPECT_EQ(decode(z, v, ids, DecodeRule::OwnToken)[0], "PER");
  EXPECT_EQ(decode(z, v, ids, DecodeRule::GlobalArgmax)[0], "O");
  EXPECT_THROW(decode(Matrix::Zero(1, 6), v, ids), Error);
}

TEST(Decode, Classifier) {
  const auto v = vocab5();
  Matrix z(3, 3);
  z << 1, 0, 0,  //
      0, 2, 1,   //
      0, 1, 3;
  EXPECT_EQ(decode_classifier(z, v), (std::vector<std::string>{"O", "PER", "LOC"}));
}

TEST(Spans, ExtractRuns) {
  EXPECT_EQ(extract_spans({"PER", "PER", "O", "LOC"}), (std::vector<Span>{{0, 2, "PER"}, {3, 4, "LOC"}}));
  EXPECT_TRUE(extract_spans({"O", "O"}).empty());
  EXPECT_EQ(extract_spans({"PER", "LOC"}), (std::vector<Span>{{0, 1, "PER"}, {1, 2, "LOC"}}));
}

TEST(Spans, PaintRoundTrip) {
  Rng rng(6);
  const std::vector<std::string> types{"PER", "LOC", "ORG"};
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Span> spans;
    std::size_t pos = rng.uniform_index(3);
    std::string last;
    while (pos < 30) {
      const std::size_t len = 1 + rng.uniform_index(3);
      std::string type = types[rng.uniform_index(3)];
      if (type == last && !spans.empty() && spans.back().end == pos) type = type == "PER" ? "LOC" : "PER";
      spans.push_back({pos, std::min<std::size_t>(30, pos + len), type});
      last = type;
      pos = spans.back().end + rng.uniform_index(3);
    }
    EXPECT_EQ(extract_spans(paint(30, spans)), spans);
  }
}

TEST(Macro, PerfectAndHandCounted) {
  const std::vector<std::vector<Span>> gold{{{0, 1, "A"}, {2, 3, "A"}, {4, 5, "B"}}};
  EXPECT_DOUBLE_EQ(macro_f1(gold, gold, {"A", "B"}).macro_f1, 1.0);
  // A: one TP, one FP, one FN; B perfect
  const std::vector<std::vector<Span>> pred{{{0, 1, "A"}, {2, 4, "A"}, {4, 5, "B"}}};
  const auto m = macro_f1(pred, gold, {"A", "B"});
  EXPECT_DOUBLE_EQ(m.per_type.at("A").precision, 0.5);
  EXPECT_DOUBLE_EQ(m.per_type.at("A").recall, 0.5);
  EXPECT_DOUBLE_EQ(m.per_type.at("A").f1, 0.5);
  EXPECT_DOUBLE_EQ(m.macro_f1, 0.75);
  EXPECT_EQ(m.per_type.at("A").support, 2u);
}

TEST(Macro, NoPredictionsAndEmptyTypes) {
  const std::vector<std::vector<Span>> gold{{{0, 1, "A"}}};
  const std::vector<std::vector<Span>> none{{}};
  EXPECT_DOUBLE_EQ(macro_f1(none, gold, {"A"}).macro_f1, 0.0);
  // B has no gold and no predictions: left out unless asked for
  const auto m = macro_f1(gold, gold, {"A", "B"});
  EXPECT_DOUBLE_EQ(m.macro_f1, 1.0);
  EXPECT_EQ(m.scored_types, std::vector<std::string>{"A"});
  EXPECT_DOUBLE_EQ(macro_f1(gold, gold, {"A", "B"}, {true}).macro_f1, 0.5);
  const std::vector<std::vector<Span>> stray{{{0, 1, "C"}}};
  try {
    macro_f1(stray, gold, {"A"});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::UnknownType);
  }
  EXPECT_THROW(macro_f1(none, {}, {"A"}), Error);
}

TEST(Macro, OrderInvariantAndBounded) {
  Rng rng(12);
  const std::vector<std::string> types{"A", "B", "C"};
  auto rand_spans = [&] {
    std::vector<Span> v;
    for (std::size_t i = 0; i < 8; ++i)
      if (rng.uniform_index(3) == 0) v.push_back({i, i + 1, types[rng.uniform_index(3)]});
    return v;
  };
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::vector<Span>> pred, gold;
    for (int s = 0; s < 10; ++s) {
      pred.push_back(rand_spans());
      gold.push_back(rand_spans());
    }
    const auto m = macro_f1(pred, gold, types);
    std::vector<std::size_t> idx(10);
    for (std::size_t i = 0; i < 10; ++i) idx[i] = i;
    rng.shuffle(idx.begin(), idx.end());
    std::vector<std::vector<Span>> p2, g2;
    for (auto i : idx) {
      p2.push_back(pred[i]);
      g2.push_back(gold[i]);
      std::reverse(p2.back().begin(), p2.back().end());
    }
    EXPECT_DOUBLE_EQ(macro_f1(p2, g2, types).macro_f1, m.macro_f1);
    for (const auto& [t, s] : m.per_type) {
      EXPECT_GE(s.f1, 0.0);
      EXPECT_LE(s.f1, std::min(1.0, 2.0 * std::min(s.precision, s.recall)) + 1e-12);
    }
  }
}

TEST(AvgGe2, PublishedRows) {
  EXPECT_NEAR(avg_ge2({88.89, 68.21, 64.96, 63.54}), 65.57, 0.005);
  EXPECT_NEAR(avg_ge2({88.89, 70.03, 66.37, 64.88}), 67.09, 0.005);
  EXPECT_DOUBLE_EQ(avg_ge2({10.0, 42.0, 42.0}), 42.0);
  try {
    avg_ge2({90.0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::TooFewSteps);
  }
}

TEST(EvaluateStage, OnePassPerSentenceAndDump) {
  const WordTokenizer tok({"a", "b", "c"});
  const RepWordTable t{{"A-PER", {"a"}}};
  const auto v = register_task(AnchorVocabulary(tok.size()), {"PER"}, t, 1);
  ModelConfig mc;
  mc.d_model = 8;
  TinyRefModel m(mc, tok.size());
  m.extend_vocab({m.embedding_row(2)});
  StageDataset data{1, Reorg::EoA, {{{"a", "b"}, {"B-PER", "O"}, "s:0"}, {{"c"}, {"O"}, "s:1"}, {{"b"}, {"O"}, "s:2"}}};
  std::ostringstream dump;
  const auto metrics = evaluate_stage(m, v, tok, data, {"PER"}, {}, &dump);
  EXPECT_EQ(metrics.forward_passes, 3u);
  EXPECT_EQ(metrics.sentences, 3u);
  EXPECT_EQ(metrics.step, 1);
  std::istringstream lines(dump.str());
  std::string line;
  std::getline(lines, line);
  EXPECT_TRUE(line.starts_with("s:0\ta\tPER\t")) << line;
  int n = 1;
  while (std::getline(lines, line)) ++n;
  EXPECT_EQ(n, 4);
}
