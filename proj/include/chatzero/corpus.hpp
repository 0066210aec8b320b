#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "chatzero/tokenizer.hpp"

namespace chatzero {

enum class Split { Train, Valid, Test };

std::string_view split_name(Split split);
Split parse_split(std::string_view name);

struct DialogueExample {
  std::string id;
  std::vector<std::string> history;  // turns joined with [TURN]
  std::vector<std::string> response;
  Language language = Language::En;

  bool operator==(const DialogueExample&) const = default;
};

struct CorpusOptions {
  int max_history_len = 512;
  int max_response_len = 50;
};

struct Corpus {
  Split split = Split::Train;
  std::vector<DialogueExample> examples;

  bool operator==(const Corpus&) const = default;
};

// JSON lines: {"id": ..., "history": [turn, ...], "response": ..., "lang": "<En>"}.
Corpus read_corpus(std::istream& in, Split split, const CorpusOptions& options = {});
Corpus load_corpus(const std::string& path, Split split, const CorpusOptions& options = {});

void write_corpus(std::ostream& out, const Corpus& corpus);
void save_corpus(const std::string& path, const Corpus& corpus);

// Tokenizes turns, joins them with [TURN] and left-truncates to the limit.
std::vector<std::string> join_history(const std::vector<std::string>& turns, int max_len);

}  // namespace chatzero
