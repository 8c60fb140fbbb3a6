#pragma once

// JSON forms of configs, schedules, representative-word tables, run results
// and model checkpoints.

#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "fsclner/anchor_vocab.hpp"
#include "fsclner/continual.hpp"
#include "fsclner/corpus.hpp"
#include "fsclner/error.hpp"
#include "fsclner/model.hpp"
#include "fsclner/tokenizer.hpp"

namespace fsclner {

using json = nlohmann::json;

NLOHMANN_JSON_SERIALIZE_ENUM(TrainMode, {{TrainMode::ToA, "toa"}, {TrainMode::ToF, "tof"}})
NLOHMANN_JSON_SERIALIZE_ENUM(EvalMode, {{EvalMode::EoA, "eoa"}, {EvalMode::EoF, "eof"}})
NLOHMANN_JSON_SERIALIZE_ENUM(Reorg, {{Reorg::ToA, "ToA"}, {Reorg::ToF, "ToF"}, {Reorg::EoA, "EoA"}, {Reorg::EoF, "EoF"}})
NLOHMANN_JSON_SERIALIZE_ENUM(MdtFormat, {{MdtFormat::Anchor, "anchor"}, {MdtFormat::Entity, "entity"}})
NLOHMANN_JSON_SERIALIZE_ENUM(HeadMode, {{HeadMode::Anchor, "anchor"}, {HeadMode::Classifier, "classifier"}})
NLOHMANN_JSON_SERIALIZE_ENUM(DecodeRule, {{DecodeRule::OwnToken, "own_token"}, {DecodeRule::GlobalArgmax, "global_argmax"}})

/// Parses an enum value, rejecting strings that are not one of its names.
template <typename E>
E parse_enum(const std::string& s, const char* what) {
  const json j = s;
  const E e = j.get<E>();
  if (json(e) != j) throw Error(Errc::InvalidConfig, std::string("bad ") + what + " '" + s + "'");
  return e;
}

inline void to_json(json& j, const LossConfig& c) { j = {{"alpha", c.alpha}, {"beta", c.beta}}; }
inline void from_json(const json& j, LossConfig& c) {
  c.alpha = j.value("alpha", c.alpha);
  c.beta = j.value("beta", c.beta);
}

inline void to_json(json& j, const ModelConfig& c) {
  j = {{"d_model", c.d_model},         {"n_layers", c.n_layers},
       {"n_heads", c.n_heads},         {"ffn_mult", c.ffn_mult},
       {"tie_weights", c.tie_weights}, {"init_std", c.init_std},
       {"embed_init_std", c.embed_init_std}, {"position_scale", c.position_scale},
       {"dropout", c.dropout},         {"head_mode", c.head_mode},
       {"seed", c.seed}};
}
inline void from_json(const json& j, ModelConfig& c) {
  c.d_model = j.value("d_model", c.d_model);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.ffn_mult = j.value("ffn_mult", c.ffn_mult);
  c.tie_weights = j.value("tie_weights", c.tie_weights);
  c.init_std = j.value("init_std", c.init_std);
  c.embed_init_std = j.value("embed_init_std", c.embed_init_std);
  c.position_scale = j.value("position_scale", c.position_scale);
  c.dropout = j.value("dropout", c.dropout);
  c.head_mode = j.value("head_mode", c.head_mode);
  c.seed = j.value("seed", c.seed);
}

inline void to_json(json& j, const StageConfig& c) {
  j = {{"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"lr", c.lr},
       {"freeze_fraction", c.freeze_fraction},
       {"mdt_per_class", c.mdt_per_class},
       {"mdt_format", c.mdt_format},
       {"shots", c.shots},
       {"train_mode", c.train_mode},
       {"eval_mode", c.eval_mode},
       {"loss", c.loss},
       {"head_mode", c.head_mode},
       {"seed", c.seed},
       {"pt_all_positions", c.pt_all_positions}};
}
inline void from_json(const json& j, StageConfig& c) {
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.freeze_fraction = j.value("freeze_fraction", c.freeze_fraction);
  c.mdt_per_class = j.value("mdt_per_class", c.mdt_per_class);
  if (j.contains("mdt_format")) c.mdt_format = parse_enum<MdtFormat>(j.at("mdt_format"), "mdt_format");
  c.shots = j.value("shots", c.shots);
  if (j.contains("train_mode")) c.train_mode = parse_enum<TrainMode>(j.at("train_mode"), "train_mode");
  if (j.contains("eval_mode")) c.eval_mode = parse_enum<EvalMode>(j.at("eval_mode"), "eval_mode");
  if (j.contains("loss")) j.at("loss").get_to(c.loss);
  if (j.contains("head_mode")) c.head_mode = parse_enum<HeadMode>(j.at("head_mode"), "head_mode");
  c.seed = j.value("seed", c.seed);
  c.pt_all_positions = j.value("pt_all_positions", c.pt_all_positions);
}

inline void to_json(json& j, const RunConfig& c) {
  j = {{"model", c.model},
       {"base", c.base},
       {"incremental", c.incremental},
       {"decode_rule", c.eval.decode_rule},
       {"include_empty_types", c.eval.macro.include_empty_types}};
}
inline void from_json(const json& j, RunConfig& c) {
  if (j.contains("model")) j.at("model").get_to(c.model);
  if (j.contains("base")) j.at("base").get_to(c.base);
  if (j.contains("incremental")) j.at("incremental").get_to(c.incremental);
  if (j.contains("decode_rule")) c.eval.decode_rule = parse_enum<DecodeRule>(j.at("decode_rule"), "decode_rule");
  c.eval.macro.include_empty_types = j.value("include_empty_types", c.eval.macro.include_empty_types);
}

inline void to_json(json& j, const TypeScores& s) {
  j = {{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}, {"support", s.support},
       {"tp", s.tp},               {"fp", s.fp},         {"fn", s.fn}};
}
inline void from_json(const json& j, TypeScores& s) {
  s.precision = j.at("precision");
  s.recall = j.at("recall");
  s.f1 = j.at("f1");
  s.support = j.at("support");
  s.tp = j.value("tp", std::size_t{0});
  s.fp = j.value("fp", std::size_t{0});
  s.fn = j.value("fn", std::size_t{0});
}

inline void to_json(json& j, const StepMetrics& m) {
  j = {{"step", m.step},
       {"eval_mode", m.eval_mode},
       {"per_type", m.per_type},
       {"scored_types", m.scored_types},
       {"macro_f1", m.macro_f1},
       {"sentences", m.sentences},
       {"forward_passes", m.forward_passes}};
}
inline void from_json(const json& j, StepMetrics& m) {
  m.step = j.at("step");
  m.eval_mode = j.at("eval_mode");
  m.per_type = j.at("per_type").get<std::map<std::string, TypeScores>>();
  m.scored_types = j.value("scored_types", std::vector<std::string>{});
  m.macro_f1 = j.at("macro_f1");
  m.sentences = j.value("sentences", std::size_t{0});
  m.forward_passes = j.value("forward_passes", std::uint64_t{0});
}

inline json result_to_json(const RunResult& r) {
  json steps = json::array();
  for (const auto& s : r.steps) {
    steps.push_back({{"metrics", s.metrics},
                     {"epoch_loss", s.epoch_loss},
                     {"train_sentences", s.train_sentences},
                     {"template_tokens", s.template_tokens},
                     {"old_anchor_targets", s.old_anchor_targets},
                     {"vocab_size", s.vocab_size},
                     {"output_size", s.output_size},
                     {"registered_anchors", s.registered_anchors},
                     {"teacher_hash_before", s.teacher_hash_before},
                     {"teacher_hash_after", s.teacher_hash_after}});
  }
  json j = {{"seed", r.seed}, {"permutation_id", r.permutation_id}, {"config", r.config}, {"steps", steps}};
  if (r.steps.size() >= 2) j["avg_ge2"] = r.avg_ge2();
  return j;
}

inline RunResult result_from_json(const json& j) {
  RunResult r;
  r.seed = j.at("seed");
  r.permutation_id = j.value("permutation_id", std::string{});
  if (j.contains("config")) j.at("config").get_to(r.config);
  for (const auto& s : j.at("steps")) {
    StepRecord rec;
    s.at("metrics").get_to(rec.metrics);
    rec.epoch_loss = s.value("epoch_loss", std::vector<double>{});
    rec.train_sentences = s.value("train_sentences", std::size_t{0});
    rec.template_tokens = s.value("template_tokens", std::size_t{0});
    rec.old_anchor_targets = s.value("old_anchor_targets", std::size_t{0});
    rec.vocab_size = s.value("vocab_size", std::size_t{0});
    rec.output_size = s.value("output_size", std::size_t{0});
    rec.registered_anchors = s.value("registered_anchors", std::vector<std::string>{});
    r.steps.push_back(std::move(rec));
  }
  return r;
}

// ---------------------------------------------------------------------------
// Files

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, "cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidConfig, path + ": " + e.what());
  }
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::Io, "cannot write " + path);
  out << text;
}

/// {"P1": [["PER"], ["LOC"], ...], ...}
inline std::map<std::string, TaskSchedule> schedules_from_json(const json& j) {
  std::map<std::string, TaskSchedule> out;
  for (const auto& [id, tasks] : j.items())
    out.emplace(id, build_schedule(tasks.get<std::vector<std::vector<std::string>>>(), id));
  return out;
}

inline std::map<std::string, TaskSchedule> load_schedules(const std::string& path) {
  return schedules_from_json(read_json_file(path));
}

inline TaskSchedule load_schedule(const std::string& path, const std::string& permutation) {
  auto all = load_schedules(path);
  auto it = all.find(permutation);
  if (it == all.end()) throw Error(Errc::InvalidConfig, "permutation " + permutation + " not in " + path);
  return it->second;
}

/// {"A-PER": ["Michael", ...], ...}
inline RepWordTable load_rep_words(const std::string& path) {
  return read_json_file(path).get<RepWordTable>();
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr const char* kCheckpointFormat = "fsclner-checkpoint";

inline json checkpoint_to_json(const TinyRefModel& model, const AnchorVocabulary& vocab,
                               const WordTokenizer& tokenizer, const json& config_echo = json::object()) {
  json params = json::array();
  model.visit_params([&](const Param& p) {
    params.push_back({{"name", p.name},
                      {"rows", p.value.rows()},
                      {"cols", p.value.cols()},
                      {"trainable", p.trainable},
                      {"data", std::vector<double>(p.value.data(), p.value.data() + p.value.size())}});
  });
  json anchors = json::array();
  for (const auto& r : vocab.records())
    anchors.push_back({{"anchor_token", r.anchor_token},
                       {"entity_type", r.entity_type},
                       {"task_index", r.task_index},
                       {"rep_words", r.rep_words},
                       {"init_vector", r.init_vector}});
  return {{"format", kCheckpointFormat},
          {"version", 1},
          {"model_config", model.config()},
          {"frozen_layers", model.frozen_layers()},
          {"vocab", {{"base", tokenizer.words()}, {"anchors", anchors}}},
          {"config", config_echo},
          {"params", params}};
}

struct Checkpoint {
  TinyRefModel model;
  AnchorVocabulary vocab;
  WordTokenizer tokenizer;
  json config;
};

inline Checkpoint checkpoint_from_json(const json& j) {
  if (j.value("format", std::string{}) != kCheckpointFormat)
    throw Error(Errc::InvalidConfig, "not a checkpoint file");
  const auto words = j.at("vocab").at("base").get<std::vector<std::string>>();
  if (words.size() < 2) throw Error(Errc::InvalidConfig, "checkpoint vocabulary lacks specials");
  Checkpoint c;
  c.tokenizer = WordTokenizer(std::vector<std::string>(words.begin() + 2, words.end()));
  std::vector<AnchorRecord> records;
  for (const auto& a : j.at("vocab").at("anchors"))
    records.push_back(AnchorRecord{a.at("anchor_token"), a.at("entity_type"), a.at("task_index"), a.at("rep_words"),
                                   a.at("init_vector")});
  c.vocab = restore_vocabulary(c.tokenizer.size(), std::move(records));
  const ModelConfig mc = j.at("model_config").get<ModelConfig>();
  c.model = TinyRefModel(mc, c.tokenizer.size());
  std::vector<std::vector<double>> anchor_rows(c.vocab.size(), std::vector<double>(static_cast<std::size_t>(mc.d_model)));
  c.model.extend_vocab(anchor_rows);
  if (mc.head_mode == HeadMode::Classifier && c.vocab.size() > 0) c.model.extend_classes(c.vocab.size() + 1);
  const auto& params = j.at("params");
  std::size_t i = 0;
  c.model.visit_params([&](Param& p) {
    if (i >= params.size()) throw Error(Errc::InvalidConfig, "checkpoint has too few tensors");
    const auto& e = params[i++];
    if (e.at("name") != p.name || e.at("rows") != p.value.rows() || e.at("cols") != p.value.cols())
      throw Error(Errc::DimensionMismatch, "checkpoint tensor " + e.at("name").get<std::string>() + " does not fit");
    const auto data = e.at("data").get<std::vector<double>>();
    std::copy(data.begin(), data.end(), p.value.data());
  });
  c.model.freeze_lower(j.value("frozen_layers", 0));
  c.config = j.value("config", json::object());
  return c;
}

inline void save_checkpoint(const std::string& path, const TinyRefModel& model, const AnchorVocabulary& vocab,
                            const WordTokenizer& tokenizer, const json& config_echo = json::object()) {
  write_text_file(path, checkpoint_to_json(model, vocab, tokenizer, config_echo).dump());
}

inline Checkpoint load_checkpoint(const std::string& path) { return checkpoint_from_json(read_json_file(path)); }

}  // namespace fsclner
