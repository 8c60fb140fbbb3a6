#pragma once

// Lexically separable toy NER corpus: every entity type owns a private word
// list, sentences are filler words with one or two inserted mentions.

#include <cctype>
#include <cstdint>
#include <string>
#include <vector>

#include "fsclner/anchor_vocab.hpp"
#include "fsclner/continual.hpp"
#include "fsclner/corpus.hpp"
#include "fsclner/rng.hpp"

namespace fsclner {

struct SyntheticSpec {
  std::vector<std::vector<std::string>> tasks{{"PER", "LOC"}, {"ORG", "MISC"}};
  int words_per_type = 8;
  int rep_words_per_type = 6;
  int filler_words = 30;
  int base_sentences = 200;
  int incremental_sentences = 200;
  int test_sentences = 200;
  int min_length = 6;
  int max_length = 12;
  int max_mentions = 2;
  std::uint64_t seed = 0;
};

struct SyntheticCorpus {
  CorpusBundle bundle;
  TaskSchedule schedule;
  RepWordTable rep_words;
};

namespace detail {

inline std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

inline std::vector<LabeledSentence> synth_split(const SyntheticSpec& spec, const std::vector<std::string>& types,
                                                int count, const std::string& name, Rng& rng) {
  std::vector<LabeledSentence> out;
  for (int i = 0; i < count; ++i) {
    const int len = spec.min_length + static_cast<int>(rng.uniform_index(
                                          static_cast<std::size_t>(spec.max_length - spec.min_length + 1)));
    LabeledSentence s;
    for (int j = 0; j < len; ++j) {
      s.tokens.push_back("w" + std::to_string(rng.uniform_index(static_cast<std::size_t>(spec.filler_words))));
      s.labels.push_back("O");
    }
    const int mentions = 1 + static_cast<int>(rng.uniform_index(static_cast<std::size_t>(spec.max_mentions)));
    for (int m = 0; m < mentions; ++m) {
      const std::string& type = types[rng.uniform_index(types.size())];
      const int mlen = 1 + static_cast<int>(rng.uniform_index(2));
      // insert at a gap not adjacent to another mention
      std::size_t at = rng.uniform_index(s.tokens.size() + 1);
      if ((at > 0 && s.labels[at - 1] != "O") || (at < s.labels.size() && s.labels[at] != "O")) continue;
      for (int k = mlen - 1; k >= 0; --k) {
        const auto w = rng.uniform_index(static_cast<std::size_t>(spec.words_per_type));
        s.tokens.insert(s.tokens.begin() + static_cast<std::ptrdiff_t>(at), lower(type) + std::to_string(w));
        s.labels.insert(s.labels.begin() + static_cast<std::ptrdiff_t>(at), (k == 0 ? "B-" : "I-") + type);
      }
    }
    s.source_id = name + ":" + std::to_string(i);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace detail

inline SyntheticCorpus make_synthetic(const SyntheticSpec& spec) {
  SyntheticCorpus c;
  c.schedule = build_schedule(spec.tasks, "synthetic");
  std::vector<std::string> all;
  for (const auto& task : spec.tasks) all.insert(all.end(), task.begin(), task.end());
  for (const auto& type : all) {
    auto& words = c.rep_words[anchor_token_for(type)];
    for (int i = 0; i < spec.rep_words_per_type; ++i) words.push_back(detail::lower(type) + std::to_string(i));
  }
  Rng rng(derive_seed(spec.seed, "synthetic-corpus"));
  c.bundle.base_pool = detail::synth_split(spec, all, spec.base_sentences, "train", rng);
  c.bundle.incremental_pool = detail::synth_split(spec, all, spec.incremental_sentences, "dev", rng);
  c.bundle.test = detail::synth_split(spec, all, spec.test_sentences, "test", rng);
  return c;
}

}  // namespace fsclner
