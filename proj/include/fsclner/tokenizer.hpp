#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "fsclner/corpus.hpp"
#include "fsclner/error.hpp"

namespace fsclner {

/// Word-level vocabulary. Ids 0 and 1 are [PAD] and [UNK]; unknown surfaces
/// map to [UNK].
class WordTokenizer {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;

  WordTokenizer() : WordTokenizer(std::vector<std::string>{}) {}

  explicit WordTokenizer(const std::vector<std::string>& words) {
    add("[PAD]");
    add("[UNK]");
    for (const auto& w : words) add(w);
  }

  /// Vocabulary from corpus tokens in first-appearance order, after `extra`.
  static WordTokenizer from_corpora(const std::vector<const std::vector<LabeledSentence>*>& corpora,
                                    const std::vector<std::string>& extra = {}) {
    WordTokenizer t(extra);
    for (const auto* corpus : corpora)
      for (const auto& s : *corpus)
        for (const auto& w : s.tokens) t.add(w);
    return t;
  }

  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }
  bool contains(std::string_view w) const { return index_.count(std::string(w)) != 0; }

  int id(std::string_view w) const {
    auto it = index_.find(std::string(w));
    return it == index_.end() ? kUnk : it->second;
  }

  const std::string& word(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= words_.size())
      throw Error(Errc::IdOutOfRange, "token id " + std::to_string(id));
    return words_[static_cast<std::size_t>(id)];
  }

  std::vector<int> encode(const std::vector<std::string>& tokens) const {
    std::vector<int> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(id(t));
    return ids;
  }

  /// Unit ids a surface word splits into. Word-level: always one unit.
  std::vector<int> units(std::string_view w) const { return {id(w)}; }

  bool operator==(const WordTokenizer& o) const { return words_ == o.words_; }

 private:
  void add(const std::string& w) {
    if (index_.emplace(w, static_cast<int>(words_.size())).second) words_.push_back(w);
  }

  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace fsclner
