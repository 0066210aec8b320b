#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "chatzero/corpus.hpp"

namespace chatzero {

// Source word -> ordered, duplicate-free target candidates. Keys are stored
// lower-cased and lookups lower-case the query.
class BilingualLexicon {
 public:
  BilingualLexicon() = default;
  BilingualLexicon(Language source, Language target) : source_(source), target_(target) {}

  void add(std::string_view source_token, std::string_view target_token);

  const std::vector<std::string>* lookup(std::string_view token) const;
  bool contains(std::string_view token) const { return lookup(token) != nullptr; }

  std::size_t size() const { return keys_.size(); }
  std::size_t candidate_count() const;
  const std::vector<std::string>& keys() const { return keys_; }
  Language source() const { return source_; }
  Language target() const { return target_; }

 private:
  Language source_ = Language::En;
  Language target_ = Language::De;
  std::vector<std::string> keys_;
  std::unordered_map<std::string, std::vector<std::string>> entries_;
};

// MUSE-style "source target" pairs, one per line.
BilingualLexicon read_lexicon(std::istream& in, Language source, Language target);
BilingualLexicon load_lexicon(const std::string& path, Language source, Language target);

using StopWords = std::unordered_set<std::string>;

StopWords default_stopwords();
// One word per line; '#' lines are comments.
StopWords load_stopwords(const std::string& path);

struct CoverageReport {
  std::size_t covered = 0;
  std::size_t total = 0;
  double f = 0.0;

  std::string to_text() const;
  static CoverageReport parse(const std::string& text);
};

// Fraction of distinct corpus words (stop words, punctuation and special
// tokens removed) that have a lexicon entry.
CoverageReport coverage(const BilingualLexicon& lexicon, const Corpus& corpus, const StopWords& stopwords);

}  // namespace chatzero
