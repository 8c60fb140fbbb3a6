#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fsclner/error.hpp"

namespace fsclner {

/// Anchor token -> representative entity words, e.g. "A-PER" -> {"Michael", ...}.
using RepWordTable = std::map<std::string, std::vector<std::string>>;

inline std::string anchor_token_for(const std::string& type) { return "A-" + type; }

struct AnchorRecord {
  std::string anchor_token;
  std::string entity_type;
  int task_index = 0;
  std::vector<std::string> rep_words;
  std::vector<double> init_vector;  // empty until an embedding source is bound

  bool operator==(const AnchorRecord&) const = default;
};

/// Append-only registry of virtual anchor tokens. Record i owns vocabulary id
/// base_size() + i for the lifetime of the registry.
class AnchorVocabulary {
 public:
  AnchorVocabulary() = default;
  explicit AnchorVocabulary(std::size_t base_size) : base_size_(base_size) {}

  std::size_t base_size() const { return base_size_; }
  std::size_t size() const { return records_.size(); }
  std::size_t total_size() const { return base_size_ + records_.size(); }
  const std::vector<AnchorRecord>& records() const { return records_; }
  const AnchorRecord& record(std::size_t i) const { return records_.at(i); }

  bool contains(const std::string& type) const { return find_type(type).has_value(); }

  std::size_t index_of(const std::string& type) const {
    if (auto i = find_type(type)) return *i;
    throw Error(Errc::UnknownType, "no anchor registered for type " + type);
  }

  int id_of(const std::string& type) const { return static_cast<int>(base_size_ + index_of(type)); }

  const std::string& anchor_of(const std::string& type) const { return records_[index_of(type)].anchor_token; }

  const std::string& type_of(const std::string& anchor) const {
    for (const auto& r : records_)
      if (r.anchor_token == anchor) return r.entity_type;
    throw Error(Errc::UnknownAnchor, "unknown anchor token " + anchor);
  }

  std::optional<int> anchor_id(const std::string& surface) const {
    for (std::size_t i = 0; i < records_.size(); ++i)
      if (records_[i].anchor_token == surface) return static_cast<int>(base_size_ + i);
    return std::nullopt;
  }

  bool is_anchor_id(int id) const {
    return id >= static_cast<int>(base_size_) && id < static_cast<int>(total_size());
  }

  const AnchorRecord& record_of_id(int id) const {
    if (!is_anchor_id(id)) throw Error(Errc::UnknownAnchor, "id " + std::to_string(id) + " is not an anchor");
    return records_[static_cast<std::size_t>(id) - base_size_];
  }

  std::vector<std::string> types_of_task(int task_index) const {
    std::vector<std::string> out;
    for (const auto& r : records_)
      if (r.task_index == task_index) out.push_back(r.entity_type);
    return out;
  }

  void set_init_vector(std::size_t i, std::vector<double> v) { records_.at(i).init_vector = std::move(v); }

  bool operator==(const AnchorVocabulary&) const = default;

 private:
  friend AnchorVocabulary register_task(AnchorVocabulary, const std::vector<std::string>&, const RepWordTable&, int);
  friend AnchorVocabulary restore_vocabulary(std::size_t, std::vector<AnchorRecord>);

  std::optional<std::size_t> find_type(const std::string& type) const {
    for (std::size_t i = 0; i < records_.size(); ++i)
      if (records_[i].entity_type == type) return i;
    return std::nullopt;
  }

  std::size_t base_size_ = 0;
  std::vector<AnchorRecord> records_;
};

/// Appends one record per type, in the given order, with anchor token "A-<type>".
inline AnchorVocabulary register_task(AnchorVocabulary vocab, const std::vector<std::string>& types,
                                      const RepWordTable& table, int task_index) {
  for (std::size_t i = 0; i < types.size(); ++i) {
    const auto& type = types[i];
    if (vocab.contains(type)) throw Error(Errc::DuplicateType, "type " + type + " already registered");
    for (std::size_t j = 0; j < i; ++j)
      if (types[j] == type) throw Error(Errc::DuplicateType, "type " + type + " listed twice");
    const std::string anchor = anchor_token_for(type);
    auto it = table.find(anchor);
    if (it == table.end() || it->second.empty())
      throw Error(Errc::MissingRepWords, "no representative words for " + anchor);
  }
  for (const auto& type : types) {
    const std::string anchor = anchor_token_for(type);
    vocab.records_.push_back(AnchorRecord{anchor, type, task_index, table.at(anchor), {}});
  }
  return vocab;
}

/// Rebuilds a registry from persisted records (checkpoint reload).
inline AnchorVocabulary restore_vocabulary(std::size_t base_size, std::vector<AnchorRecord> records) {
  AnchorVocabulary v(base_size);
  v.records_ = std::move(records);
  return v;
}

/// Anchor initialization: the arithmetic mean of the representative words'
/// embedding vectors.
inline std::vector<double> anchor_embedding_init(const std::vector<std::vector<double>>& word_vectors) {
  if (word_vectors.empty()) throw Error(Errc::EmptyList, "no word vectors");
  const std::size_t d = word_vectors.front().size();
  std::vector<double> sum(d, 0.0);
  for (const auto& v : word_vectors) {
    if (v.size() != d) throw Error(Errc::DimensionMismatch, "word vectors differ in dimension");
    for (std::size_t i = 0; i < d; ++i) sum[i] += v[i];
  }
  const double inv = 1.0 / static_cast<double>(word_vectors.size());
  for (auto& x : sum) x *= inv;
  return sum;
}

/// Same as anchor_embedding_init, where each word is first reduced to the mean
/// of its subword unit vectors.
inline std::vector<double> anchor_embedding_init_units(const std::vector<std::vector<std::vector<double>>>& words) {
  std::vector<std::vector<double>> per_word;
  per_word.reserve(words.size());
  for (const auto& units : words) per_word.push_back(anchor_embedding_init(units));
  return anchor_embedding_init(per_word);
}

}  // namespace fsclner
