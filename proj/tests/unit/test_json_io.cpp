#include <gtest/gtest.h>

#include <filesystem>

#include "fsclner/json_io.hpp"
#include "fsclner/synthetic.hpp"

using namespace fsclner;

namespace {

const std::string kRoot = FSCLNER_SOURCE_DIR;

}  // namespace

TEST(Json, RunConfigRoundTrip) {
  RunConfig c;
  c.model.d_model = 32;
  c.model.tie_weights = false;
  c.base.lr = 3e-3;
  c.incremental.mdt_format = MdtFormat::Entity;
  c.incremental.train_mode = TrainMode::ToF;
  c.incremental.eval_mode = EvalMode::EoF;
  c.incremental.loss = {0.5, 2.0};
  c.eval.decode_rule = DecodeRule::GlobalArgmax;
  c.eval.macro.include_empty_types = true;
  c.set_seed(42);
  const json j = c;
  const RunConfig back = json::parse(j.dump()).get<RunConfig>();
  EXPECT_EQ(back, c);
  EXPECT_EQ(j.at("incremental").at("train_mode"), "tof");
}

TEST(Json, BadEnumStringsRejected) {
  json j = {{"incremental", {{"train_mode", "toa2"}}}};
  EXPECT_THROW(j.get<RunConfig>(), Error);
  EXPECT_EQ(parse_enum<EvalMode>("eof", "eval_mode"), EvalMode::EoF);
}

TEST(Json, SchedulesMatchShippedPermutations) {
  const auto conll = load_schedules(kRoot + "/data/schedules/conll2003.json");
  EXPECT_EQ(conll.size(), 8u);
  EXPECT_EQ(conll.at("P1").tasks(),
            (std::vector<std::vector<std::string>>{{"PER"}, {"LOC"}, {"ORG"}, {"MISC"}}));
  for (const auto& [id, s] : conll) EXPECT_EQ(s.size(), 4) << id;
  const auto onto = load_schedule(kRoot + "/data/schedules/ontonotes5.json", "P1");
  EXPECT_EQ(onto.task(1), (std::vector<std::string>{"CARDINAL", "DATE", "EVENT", "FAC"}));
  EXPECT_THROW(load_schedule(kRoot + "/data/schedules/conll2003.json", "P9"), Error);
  EXPECT_THROW(read_json_file(kRoot + "/nope.json"), Error);
}

TEST(Json, ResultRoundTripKeepsMetrics) {
  SyntheticSpec s;
  s.base_sentences = 40;
  s.incremental_sentences = 40;
  s.test_sentences = 20;
  const auto c = make_synthetic(s);
  RunConfig cfg;
  cfg.model.d_model = 8;
  cfg.base.epochs = 1;
  cfg.incremental.epochs = 1;
  const auto r = run_continual(c.bundle, c.schedule, c.rep_words, cfg);
  const json j = result_to_json(r);
  EXPECT_FALSE(j.contains("stage_seconds"));
  EXPECT_DOUBLE_EQ(j.at("avg_ge2").get<double>(), r.avg_ge2());
  const auto back = result_from_json(json::parse(j.dump()));
  ASSERT_EQ(back.steps.size(), r.steps.size());
  for (std::size_t i = 0; i < r.steps.size(); ++i) EXPECT_EQ(back.steps[i].metrics, r.steps[i].metrics);
  EXPECT_EQ(back.config, r.config);
}

TEST(Json, CheckpointReloadReproducesLogits) {
  const WordTokenizer tok({"a", "b", "c", "d"});
  const RepWordTable t{{"A-PER", {"a", "b"}}, {"A-LOC", {"c"}}};
  ModelConfig mc;
  mc.d_model = 8;
  mc.seed = 3;
  TinyRefModel m(mc, tok.size());
  auto vocab = extend_for_task(m, AnchorVocabulary(tok.size()), tok, {"PER"}, t, 1);
  vocab = extend_for_task(m, std::move(vocab), tok, {"LOC"}, t, 2);
  m.freeze_lower(1);
  const auto path = (std::filesystem::temp_directory_path() / "fsclner_ckpt_test.json").string();
  save_checkpoint(path, m, vocab, tok, json{{"note", "x"}});
  const auto c = load_checkpoint(path);
  std::filesystem::remove(path);
  const std::vector<int> ids{2, 3, 6, 7};
  EXPECT_EQ(c.model.forward(ids), m.forward(ids));
  EXPECT_EQ(c.model.param_hash(), m.param_hash());
  EXPECT_EQ(c.vocab, vocab);
  EXPECT_EQ(c.tokenizer, tok);
  EXPECT_EQ(c.model.frozen_layers(), 1);
  EXPECT_EQ(c.config.at("note"), "x");
  EXPECT_THROW(checkpoint_from_json(json{{"format", "other"}}), Error);
}
