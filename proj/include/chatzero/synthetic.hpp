#pragma once

// Artificial two-language dialogue corpus. Words of both languages are
// syllable strings; every source word has exactly one target translation,
// and the emitted lexicon reveals only part of the content vocabulary.
// Each dialogue follows one topic: history turns and response form a single
// walk that usually steps along a fixed cycle of the topic's words, so a
// response is predictable from the end of its history.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "chatzero/corpus.hpp"
#include "chatzero/lexicon.hpp"
#include "chatzero/metrics.hpp"

namespace chatzero {

struct SyntheticSpec {
  std::uint64_t seed = 1;
  int topics = 8;
  int words_per_topic = 24;
  int function_words = 16;
  int train = 2000;
  int valid = 200;
  int test = 200;
  double coverage = 0.7;
  // Share of covered words that get an extra target candidate.
  double second_candidate_rate = 0.1;
  int max_turns = 3;
  // Probability that a walk takes the next word of its topic cycle rather
  // than a uniformly drawn topic word.
  double chain_strength = 0.85;
  int min_sentence = 4;
  int max_sentence = 8;
  int vector_dim = 16;
  Language source = Language::En;
  Language target = Language::De;
};

struct SyntheticCorpus {
  Corpus train;
  Corpus valid;
  Corpus test;  // translated into the target language
  BilingualLexicon lexicon;
  std::map<std::string, std::string> translation;
  StopWords stopwords;
  std::vector<std::string> target_vocabulary;
  WordVectorTable target_vectors;
};

SyntheticCorpus make_synthetic(const SyntheticSpec& spec);

// train.jsonl, valid.jsonl, test.jsonl, lexicon.txt, stopwords.txt, vectors.txt.
void save_synthetic(const SyntheticCorpus& data, const std::string& dir);

// Responses of the reference lengths drawn uniformly from the vocabulary.
std::vector<Tokens> random_responses(const std::vector<Tokens>& references, const std::vector<std::string>& vocabulary,
                                     std::uint64_t seed);

}  // namespace chatzero
