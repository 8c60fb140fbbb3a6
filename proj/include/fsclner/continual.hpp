#pragma once

// The stage loop: snapshot a teacher, register and embed the new anchors,
// assemble the stage's training data, train on the weighted prompt-tuning +
// distillation objective, then evaluate.

#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fsclner/anchor_vocab.hpp"
#include "fsclner/corpus.hpp"
#include "fsclner/error.hpp"
#include "fsclner/evaluate.hpp"
#include "fsclner/model.hpp"
#include "fsclner/objectives.hpp"
#include "fsclner/optim.hpp"
#include "fsclner/prompting.hpp"
#include "fsclner/rng.hpp"
#include "fsclner/tokenizer.hpp"

namespace fsclner {

struct StageConfig {
  int epochs = 5;
  int batch_size = 32;
  double lr = 1e-4;
  double freeze_fraction = 0.0;
  int mdt_per_class = 0;
  MdtFormat mdt_format = MdtFormat::Anchor;
  int shots = 5;
  TrainMode train_mode = TrainMode::ToA;
  EvalMode eval_mode = EvalMode::EoA;
  LossConfig loss;
  HeadMode head_mode = HeadMode::Anchor;
  std::uint64_t seed = 0;
  bool pt_all_positions = true;  // false: entity tokens + template anchor slots only

  static StageConfig base_defaults() { return StageConfig{}; }

  static StageConfig incremental_defaults() {
    StageConfig c;
    c.epochs = 20;
    c.batch_size = 2;
    c.freeze_fraction = 0.75;
    c.mdt_per_class = 2;
    return c;
  }

  void validate() const {
    if (epochs < 1 || batch_size < 1) throw Error(Errc::InvalidConfig, "epochs and batch size must be >= 1");
    if (!(lr > 0.0)) throw Error(Errc::InvalidConfig, "learning rate must be > 0");
    if (freeze_fraction < 0.0 || freeze_fraction > 1.0) throw Error(Errc::InvalidConfig, "freeze fraction not in [0,1]");
    if (mdt_per_class < 0) throw Error(Errc::InvalidConfig, "mdt_per_class must be >= 0");
    if (shots < 1) throw Error(Errc::InvalidConfig, "shots must be >= 1");
    loss.validate();
  }

  bool operator==(const StageConfig&) const = default;
};

/// Base-stage and incremental-stage settings plus the encoder shape.
struct RunConfig {
  ModelConfig model;
  StageConfig base = StageConfig::base_defaults();
  StageConfig incremental = StageConfig::incremental_defaults();
  EvalOptions eval;

  std::uint64_t seed() const { return base.seed; }

  void set_seed(std::uint64_t s) {
    base.seed = s;
    incremental.seed = s;
  }

  void validate() const {
    base.validate();
    incremental.validate();
    if (base.head_mode != incremental.head_mode)
      throw Error(Errc::InvalidConfig, "head mode must agree between stages");
  }

  bool operator==(const RunConfig& o) const {
    return model == o.model && base == o.base && incremental == o.incremental &&
           eval.decode_rule == o.eval.decode_rule && eval.macro.include_empty_types == o.eval.macro.include_empty_types;
  }
};

/// Applies ablation switches: no_mdt, mdt_entity_format, no_apt.
inline RunConfig ablate(RunConfig cfg, const std::vector<std::string>& switches) {
  for (const auto& s : switches) {
    if (s == "no_mdt") {
      cfg.base.mdt_per_class = 0;
      cfg.incremental.mdt_per_class = 0;
    } else if (s == "mdt_entity_format") {
      cfg.base.mdt_format = MdtFormat::Entity;
      cfg.incremental.mdt_format = MdtFormat::Entity;
    } else if (s == "no_apt") {
      cfg.base.head_mode = HeadMode::Classifier;
      cfg.incremental.head_mode = HeadMode::Classifier;
      cfg.model.head_mode = HeadMode::Classifier;
    } else {
      throw Error(Errc::UnknownSwitch, "unknown ablation switch '" + s + "'");
    }
  }
  return cfg;
}

struct StageTrace {
  std::vector<double> epoch_loss;  // mean L_tot per instance, one per epoch
  std::size_t instances = 0;
  std::size_t template_tokens = 0;  // summed over all epochs
  std::size_t old_anchor_targets = 0;
  std::uint64_t teacher_hash_before = 0;
  std::uint64_t teacher_hash_after = 0;
};

inline int frozen_layer_count(double fraction, int n_layers) {
  return static_cast<int>(std::floor(fraction * static_cast<double>(n_layers) + 1e-12));
}

/// Trains `student` on one stage. `old_types` is the union of all earlier
/// tasks' types (empty at t = 1); templates are drawn afresh for every epoch.
template <SequenceEncoder M>
StageTrace train_stage(M& student, const TeacherModel<M>* teacher, const StageDataset& data,
                       const AnchorVocabulary& vocab, const WordTokenizer& tokenizer,
                       const std::vector<std::string>& old_types, const StageConfig& cfg, Rng& rng) {
  cfg.validate();
  const int t = data.step;
  if (t > 1 && teacher == nullptr) throw Error(Errc::TeacherMissing, "step " + std::to_string(t) + " needs a teacher");
  if (vocab.types_of_task(t).empty() || student.vocab_size() != vocab.total_size() ||
      (student.head_mode() == HeadMode::Classifier && student.output_size() != vocab.size() + 1))
    throw Error(Errc::VocabNotExtended, "anchors for step " + std::to_string(t) + " are not in the model");

  StageTrace trace;
  if (teacher) trace.teacher_hash_before = teacher->param_hash();
  student.freeze_lower(frozen_layer_count(cfg.freeze_fraction, student.n_layers()));
  Adam opt;
  const bool classifier = student.head_mode() == HeadMode::Classifier;
  const std::vector<std::string> templated = cfg.mdt_per_class > 0 ? old_types : std::vector<std::string>{};

  std::vector<std::size_t> order(data.sentences.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const auto bs = static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    double epoch_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t end = std::min(order.size(), start + bs);
      const double inv_batch = 1.0 / static_cast<double>(end - start);
      student.zero_grad();
      double batch_loss = 0.0;
      for (std::size_t b = start; b < end; ++b) {
        PromptInstance inst = build_target(data.sentences[order[b]], vocab, tokenizer, t);
        inst = augment_with_mdt(inst, templated, static_cast<std::size_t>(cfg.mdt_per_class), vocab, tokenizer,
                                cfg.mdt_format, rng);
        trace.template_tokens += inst.size() - inst.content_length;
        for (std::size_t j = 0; j < inst.size(); ++j)
          if (vocab.is_anchor_id(inst.target_ids[j]) && vocab.record_of_id(inst.target_ids[j]).task_index < t)
            ++trace.old_anchor_targets;

        std::vector<int> targets = inst.target_ids;
        if (classifier)
          for (auto& id : targets) id = vocab.is_anchor_id(id) ? id - static_cast<int>(vocab.base_size()) + 1 : 0;

        const ForwardCache cache = student.forward_train(inst.input_ids);
        const auto positions = cfg.pt_all_positions ? all_positions(inst.size()) : anchor_positions(inst);
        LossWithGrad pt{0.0, Matrix::Zero(cache.logits.rows(), cache.logits.cols())};
        if (!positions.empty()) pt = pt_loss_with_grad(cache.logits, targets, positions);
        Matrix dlogits = cfg.loss.beta * pt.grad;
        double kd_value = 0.0;
        if (teacher) {
          const Matrix teacher_logits = teacher->forward(inst.input_ids);
          const LossWithGrad kd = kd_loss_with_grad(cache.logits, teacher_logits, kd_position_mask(inst),
                                                    static_cast<Eigen::Index>(teacher->support()));
          kd_value = kd.value;
          dlogits += cfg.loss.alpha * kd.grad;
        }
        const double loss = teacher ? total_loss(kd_value, pt.value, cfg.loss) : total_loss(0.0, pt.value, cfg.loss);
        dlogits *= inv_batch;
        student.backward(cache, dlogits);
        batch_loss += loss * inv_batch;
      }
      grad_step(student, batch_loss, opt, cfg.lr);
      epoch_sum += batch_loss * static_cast<double>(end - start);
    }
    trace.epoch_loss.push_back(order.empty() ? 0.0 : epoch_sum / static_cast<double>(order.size()));
  }
  trace.instances = order.size();
  if (teacher) trace.teacher_hash_after = teacher->param_hash();
  return trace;
}

/// Raw material for one run. `episodes`, when non-empty, supplies the
/// K-shot training pool for step t (t >= 2) instead of sampling it.
struct CorpusBundle {
  std::vector<LabeledSentence> base_pool;
  std::vector<LabeledSentence> incremental_pool;
  std::vector<LabeledSentence> test;
  std::map<int, std::vector<LabeledSentence>> episodes;
};

struct StepRecord {
  StepMetrics metrics;
  std::vector<double> epoch_loss;
  std::size_t train_sentences = 0;
  std::size_t template_tokens = 0;
  std::size_t old_anchor_targets = 0;
  std::size_t vocab_size = 0;
  std::size_t output_size = 0;
  std::vector<std::string> registered_anchors;
  std::uint64_t teacher_hash_before = 0;
  std::uint64_t teacher_hash_after = 0;
};

struct RunResult {
  std::uint64_t seed = 0;
  std::string permutation_id;
  RunConfig config;
  std::vector<StepRecord> steps;
  std::vector<double> stage_seconds;  // wall clock, never serialized into results

  std::vector<double> macro_per_step() const {
    std::vector<double> v;
    for (const auto& s : steps) v.push_back(s.metrics.macro_f1);
    return v;
  }
  double avg_ge2() const { return fsclner::avg_ge2(macro_per_step()); }
};

/// K-shot pool for step t: greedy sample of the task's types with a per-step seed.
inline std::vector<LabeledSentence> sample_episode(const std::vector<LabeledSentence>& pool,
                                                   const TaskSchedule& schedule, int t, int shots,
                                                   std::uint64_t seed) {
  return greedy_sample(pool, schedule.task(t), static_cast<std::size_t>(shots),
                       derive_seed(seed, "episode", static_cast<std::uint64_t>(t)));
}

/// Vocabulary for a run: template words, the scheduled types'
/// representative words, then every training-pool token.
inline WordTokenizer build_run_tokenizer(const CorpusBundle& bundle, const TaskSchedule& schedule,
                                         const RepWordTable& table) {
  std::vector<std::string> extra(std::begin(kTemplateWords), std::end(kTemplateWords));
  for (const auto& task : schedule.tasks())
    for (const auto& type : task)
      if (auto it = table.find(anchor_token_for(type)); it != table.end())
        extra.insert(extra.end(), it->second.begin(), it->second.end());
  std::vector<const std::vector<LabeledSentence>*> corpora{&bundle.base_pool, &bundle.incremental_pool};
  for (const auto& [t, ep] : bundle.episodes) corpora.push_back(&ep);
  return WordTokenizer::from_corpora(corpora, extra);
}

/// Registers task t's anchors and appends their mean-embedding rows to the model.
template <SequenceEncoder M>
AnchorVocabulary extend_for_task(M& model, AnchorVocabulary vocab, const WordTokenizer& tokenizer,
                                 const std::vector<std::string>& types, const RepWordTable& table, int t) {
  for (const auto& type : types)
    if (tokenizer.contains(anchor_token_for(type)))
      throw Error(Errc::InvalidConfig, "anchor " + anchor_token_for(type) + " collides with a base token");
  const std::size_t first = vocab.size();
  vocab = register_task(std::move(vocab), types, table, t);
  std::vector<std::vector<double>> rows;
  for (std::size_t i = first; i < vocab.size(); ++i) {
    std::vector<std::vector<std::vector<double>>> words;
    for (const auto& w : vocab.record(i).rep_words) {
      std::vector<std::vector<double>> units;
      for (int id : tokenizer.units(w)) units.push_back(model.embedding_row(id));
      words.push_back(std::move(units));
    }
    rows.push_back(anchor_embedding_init_units(words));
    vocab.set_init_vector(i, rows.back());
  }
  model.extend_vocab(rows);
  if (model.head_mode() == HeadMode::Classifier) model.extend_classes(rows.size() + (first == 0 ? 1 : 0));
  return vocab;
}

/// Called after each stage with (t, model, vocab, tokenizer).
template <typename M>
using StageObserver = std::function<void(int, const M&, const AnchorVocabulary&, const WordTokenizer&)>;

template <SequenceEncoder M = TinyRefModel>
RunResult run_continual(const CorpusBundle& bundle, const TaskSchedule& schedule, const RepWordTable& table,
                        const RunConfig& cfg, const StageObserver<M>& observer = {}) {
  cfg.validate();
  RunResult result;
  result.seed = cfg.seed();
  result.permutation_id = schedule.permutation_id();
  result.config = cfg;

  const WordTokenizer tokenizer = build_run_tokenizer(bundle, schedule, table);
  ModelConfig mc = cfg.model;
  mc.head_mode = cfg.base.head_mode;
  mc.seed = derive_seed(cfg.seed(), "model");
  M model(mc, tokenizer.size());
  AnchorVocabulary vocab(tokenizer.size());

  for (int t = 1; t <= schedule.size(); ++t) {
    const auto t0 = std::chrono::steady_clock::now();
    const StageConfig& sc = t == 1 ? cfg.base : cfg.incremental;
    std::optional<TeacherModel<M>> teacher;
    if (t > 1) teacher.emplace(snapshot(model));

    vocab = extend_for_task(model, std::move(vocab), tokenizer, schedule.task(t), table, t);

    std::vector<LabeledSentence> pool;
    if (t == 1) {
      pool = bundle.base_pool;
    } else if (auto it = bundle.episodes.find(t); it != bundle.episodes.end()) {
      pool = it->second;
    } else {
      pool = sample_episode(bundle.incremental_pool, schedule, t, sc.shots, cfg.seed());
    }
    const StageDataset train = reorganize_train(pool, schedule, t, sc.train_mode);
    Rng rng(derive_seed(cfg.seed(), "train", static_cast<std::uint64_t>(t)));
    const StageTrace trace =
        train_stage(model, teacher ? &*teacher : nullptr, train, vocab, tokenizer, schedule.old_types(t), sc, rng);

    const StageDataset eval = build_eval(bundle.test, schedule, t, sc.eval_mode);
    StepRecord rec;
    rec.metrics = evaluate_stage(model, vocab, tokenizer, eval, schedule.seen_types(t), cfg.eval);
    rec.epoch_loss = trace.epoch_loss;
    rec.train_sentences = train.sentences.size();
    rec.template_tokens = trace.template_tokens;
    rec.old_anchor_targets = trace.old_anchor_targets;
    rec.vocab_size = model.vocab_size();
    rec.output_size = model.output_size();
    for (const auto& r : vocab.records()) rec.registered_anchors.push_back(r.anchor_token);
    rec.teacher_hash_before = trace.teacher_hash_before;
    rec.teacher_hash_after = trace.teacher_hash_after;
    result.steps.push_back(std::move(rec));
    if (observer) observer(t, model, vocab, tokenizer);
    result.stage_seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  return result;
}

}  // namespace fsclner
