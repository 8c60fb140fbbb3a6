#pragma once

// Target-sequence construction (entity tokens -> anchors) and memory
// demonstration templates appended after the content region.

#include <cstdint>
#include <string>
#include <vector>

#include "fsclner/anchor_vocab.hpp"
#include "fsclner/corpus.hpp"
#include "fsclner/error.hpp"
#include "fsclner/rng.hpp"
#include "fsclner/tokenizer.hpp"

namespace fsclner {

enum class Role : std::uint8_t { ContentO, ContentCurrentEntity, TemplateFiller, TemplateAnchorSlot };

enum class MdtFormat { Anchor, Entity };

inline constexpr const char* kTemplateWords[] = {"belongs", "to", "."};

struct PromptInstance {
  std::vector<int> input_ids;
  std::vector<int> target_ids;
  std::vector<Role> roles;
  int step = 1;
  std::string origin;
  std::size_t content_length = 0;  // templates start here

  std::size_t size() const { return input_ids.size(); }
  bool operator==(const PromptInstance&) const = default;
};

struct MdtTemplate {
  std::vector<std::string> tokens;
  std::vector<std::string> target_tokens;
  std::vector<int> input_ids;
  std::vector<int> target_ids;
  std::vector<Role> roles;
};

/// Input ids are the sentence's own tokens; every token of a mention of a
/// task-`step` type targets that type's anchor id, all others target themselves.
inline PromptInstance build_target(const LabeledSentence& sentence, const AnchorVocabulary& vocab,
                                   const WordTokenizer& tokenizer, int step) {
  PromptInstance inst;
  inst.step = step;
  inst.origin = sentence.source_id;
  inst.input_ids = tokenizer.encode(sentence.tokens);
  inst.target_ids = inst.input_ids;
  inst.roles.assign(inst.input_ids.size(), Role::ContentO);
  for (std::size_t j = 0; j < sentence.labels.size(); ++j) {
    const auto type = std::string(label_type(sentence.labels[j]));
    if (type.empty()) continue;
    const std::size_t idx = vocab.index_of(type);
    if (vocab.record(idx).task_index != step)
      throw Error(Errc::UnknownType, "type " + type + " is not part of task " + std::to_string(step));
    inst.target_ids[j] = static_cast<int>(vocab.base_size() + idx);
    inst.roles[j] = Role::ContentCurrentEntity;
  }
  inst.content_length = inst.input_ids.size();
  return inst;
}

/// Anchor format: "eps belongs to A-X ." -> "A-X belongs to A-X .";
/// entity format: "eps ." -> "A-X .". eps is drawn uniformly from the type's
/// representative words.
inline MdtTemplate make_mdt(const std::string& type, const AnchorVocabulary& vocab, const WordTokenizer& tokenizer,
                            MdtFormat format, Rng& rng) {
  const std::size_t idx = vocab.index_of(type);
  const AnchorRecord& rec = vocab.record(idx);
  const int anchor_id = static_cast<int>(vocab.base_size() + idx);
  const std::string& word = rec.rep_words[rng.uniform_index(rec.rep_words.size())];

  MdtTemplate m;
  if (format == MdtFormat::Anchor) {
    m.tokens = {word, "belongs", "to", rec.anchor_token, "."};
    m.target_tokens = {rec.anchor_token, "belongs", "to", rec.anchor_token, "."};
    m.roles = {Role::TemplateAnchorSlot, Role::TemplateFiller, Role::TemplateFiller, Role::TemplateAnchorSlot,
               Role::TemplateFiller};
  } else {
    m.tokens = {word, "."};
    m.target_tokens = {rec.anchor_token, "."};
    m.roles = {Role::TemplateAnchorSlot, Role::TemplateFiller};
  }
  auto to_id = [&](const std::string& s) { return s == rec.anchor_token ? anchor_id : tokenizer.id(s); };
  for (const auto& s : m.tokens) m.input_ids.push_back(to_id(s));
  for (const auto& s : m.target_tokens) m.target_ids.push_back(to_id(s));
  return m;
}

/// Appends `per_class_count` freshly drawn templates for each old type, in
/// the order given. The content region is left untouched.
inline PromptInstance augment_with_mdt(const PromptInstance& instance, const std::vector<std::string>& old_types,
                                       std::size_t per_class_count, const AnchorVocabulary& vocab,
                                       const WordTokenizer& tokenizer, MdtFormat format, Rng& rng) {
  PromptInstance out = instance;
  if (old_types.empty() || per_class_count == 0) return out;
  for (const auto& type : old_types) {
    if (vocab.record(vocab.index_of(type)).task_index >= instance.step)
      throw Error(Errc::InvalidConfig, "template type " + type + " is not an old type at step " +
                                           std::to_string(instance.step));
    for (std::size_t c = 0; c < per_class_count; ++c) {
      MdtTemplate m = make_mdt(type, vocab, tokenizer, format, rng);
      out.input_ids.insert(out.input_ids.end(), m.input_ids.begin(), m.input_ids.end());
      out.target_ids.insert(out.target_ids.end(), m.target_ids.begin(), m.target_ids.end());
      out.roles.insert(out.roles.end(), m.roles.begin(), m.roles.end());
    }
  }
  return out;
}

}  // namespace fsclner
