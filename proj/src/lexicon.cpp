#include "chatzero/lexicon.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "chatzero/config.hpp"
#include "chatzero/errors.hpp"

namespace chatzero {

void BilingualLexicon::add(std::string_view source_token, std::string_view target_token) {
  const std::string key = to_lower(source_token);
  auto [it, inserted] = entries_.try_emplace(key);
  if (inserted) keys_.push_back(key);
  auto& candidates = it->second;
  if (std::find(candidates.begin(), candidates.end(), target_token) == candidates.end())
    candidates.emplace_back(target_token);
}

const std::vector<std::string>* BilingualLexicon::lookup(std::string_view token) const {
  auto it = entries_.find(to_lower(token));
  return it == entries_.end() ? nullptr : &it->second;
}

std::size_t BilingualLexicon::candidate_count() const {
  std::size_t n = 0;
  for (const auto& [k, v] : entries_) n += v.size();
  return n;
}

BilingualLexicon read_lexicon(std::istream& in, Language source, Language target) {
  BilingualLexicon lex(source, target);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::vector<std::string> parts;
    std::string f;
    while (fields >> f) parts.push_back(f);
    if (parts.empty()) continue;
    if (parts.size() != 2)
      throw ParseError("expected 'source target', got " + std::to_string(parts.size()) + " fields", line_no);
    lex.add(parts[0], parts[1]);
  }
  return lex;
}

BilingualLexicon load_lexicon(const std::string& path, Language source, Language target) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open lexicon " + path);
  try {
    return read_lexicon(in, source, target);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

StopWords default_stopwords() {
  static const char* words[] = {
      "a",     "about", "after", "again", "all",   "am",    "an",    "and",   "any",   "are",   "as",    "at",
      "be",    "been",  "before", "being", "but",  "by",    "can",   "could", "did",   "do",    "does",  "doing",
      "for",   "from",  "had",   "has",   "have",  "having", "he",   "her",   "here",  "him",   "his",   "how",
      "i",     "if",    "in",    "into",  "is",    "it",    "its",   "just",  "me",    "my",    "no",    "not",
      "now",   "of",    "on",    "only",  "or",    "our",   "out",   "over",  "s",     "she",   "should", "so",
      "some",  "such",  "t",     "than",  "that",  "the",   "their", "them",  "then",  "there", "these", "they",
      "this",  "those", "to",    "too",   "up",    "very",  "was",   "we",    "were",  "what",  "when",  "where",
      "which", "while", "who",   "why",   "will",  "with",  "would", "you",   "your",  "yours", "ll",    "re",
      "ve",    "d",     "m"};
  return StopWords(std::begin(words), std::end(words));
}

StopWords load_stopwords(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open stop-word list " + path);
  StopWords out;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream fields(line);
    std::string w;
    if (!(fields >> w) || w[0] == '#') continue;
    out.insert(to_lower(w));
  }
  return out;
}

std::string CoverageReport::to_text() const {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", f);
  return "covered = " + std::to_string(covered) + "\ntotal = " + std::to_string(total) + "\nf = " + buf + "\n";
}

CoverageReport CoverageReport::parse(const std::string& text) {
  const Config cfg = Config::parse(text);
  CoverageReport r;
  r.covered = static_cast<std::size_t>(cfg.get_int("covered", 0));
  r.total = static_cast<std::size_t>(cfg.get_int("total", 0));
  r.f = cfg.get_double("f", 0.0);
  return r;
}

CoverageReport coverage(const BilingualLexicon& lexicon, const Corpus& corpus, const StopWords& stopwords) {
  std::unordered_set<std::string> distinct;
  auto visit = [&](const std::vector<std::string>& tokens) {
    for (const auto& tok : tokens) {
      if (is_special_token(tok) || is_punctuation(tok)) continue;
      std::string w = to_lower(tok);
      if (stopwords.count(w)) continue;
      distinct.insert(std::move(w));
    }
  };
  for (const auto& ex : corpus.examples) {
    visit(ex.history);
    visit(ex.response);
  }
  if (distinct.empty()) throw DegenerateInputError("coverage: no tokens left after filtering");
  CoverageReport r;
  r.total = distinct.size();
  for (const auto& w : distinct)
    if (lexicon.contains(w)) ++r.covered;
  r.f = static_cast<double>(r.covered) / static_cast<double>(r.total);
  return r;
}

}  // namespace chatzero
