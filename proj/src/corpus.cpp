#include "chatzero/corpus.hpp"

#include <fstream>
#include <iostream>
#include <json.hpp>
#include <unordered_set>

#include "chatzero/errors.hpp"

namespace chatzero {

using nlohmann::json;

std::string_view split_name(Split split) {
  switch (split) {
    case Split::Train:
      return "train";
    case Split::Valid:
      return "valid";
    case Split::Test:
      return "test";
  }
  return "train";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::Train;
  if (name == "valid" || name == "validation" || name == "dev") return Split::Valid;
  if (name == "test") return Split::Test;
  throw ConfigError("unknown split '" + std::string(name) + "'");
}

std::vector<std::string> join_history(const std::vector<std::string>& turns, int max_len) {
  std::vector<std::string> out;
  for (const auto& turn : turns) {
    auto words = split_words(turn);
    if (words.empty()) continue;
    if (!out.empty()) out.emplace_back(special::kTurn);
    out.insert(out.end(), words.begin(), words.end());
  }
  if (max_len > 0 && static_cast<int>(out.size()) > max_len) out.erase(out.begin(), out.end() - max_len);
  // A truncated history must not start mid-boundary.
  while (!out.empty() && out.front() == special::kTurn) out.erase(out.begin());
  return out;
}

Corpus read_corpus(std::istream& in, Split split, const CorpusOptions& options) {
  Corpus corpus;
  corpus.split = split;
  std::unordered_set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json record;
    try {
      record = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("invalid JSON: ") + e.what(), line_no);
    }
    if (!record.is_object()) throw ParseError("record is not an object", line_no);
    for (const char* field : {"id", "history", "response", "lang"})
      if (!record.contains(field)) throw ParseError(std::string("missing field '") + field + "'", line_no);

    DialogueExample ex;
    if (record["id"].is_string())
      ex.id = record["id"].get<std::string>();
    else if (record["id"].is_number_integer())
      ex.id = std::to_string(record["id"].get<long long>());
    else
      throw ParseError("field 'id' must be a string or integer", line_no);

    std::vector<std::string> turns;
    if (record["history"].is_string()) {
      turns.push_back(record["history"].get<std::string>());
    } else if (record["history"].is_array()) {
      for (const auto& t : record["history"]) {
        if (!t.is_string()) throw ParseError("history turns must be strings", line_no);
        turns.push_back(t.get<std::string>());
      }
    } else {
      throw ParseError("field 'history' must be a list of turns", line_no);
    }
    if (!record["response"].is_string()) throw ParseError("field 'response' must be a string", line_no);
    if (!record["lang"].is_string()) throw ParseError("field 'lang' must be a string", line_no);
    auto lang = parse_language(record["lang"].get<std::string>());
    if (!lang) throw ParseError("unknown language '" + record["lang"].get<std::string>() + "'", line_no);
    ex.language = *lang;

    ex.history = join_history(turns, options.max_history_len);
    ex.response = split_words(record["response"].get<std::string>());
    if (static_cast<int>(ex.response.size()) > options.max_response_len) ex.response.resize(options.max_response_len);
    if (ex.history.empty()) throw ParseError("empty history after tokenization", line_no);
    if (ex.response.empty()) throw ParseError("empty response after tokenization", line_no);
    if (!ids.insert(ex.id).second) throw ParseError("duplicate id '" + ex.id + "'", line_no);
    corpus.examples.push_back(std::move(ex));
  }
  if (corpus.examples.empty()) throw DegenerateInputError("empty corpus");
  return corpus;
}

Corpus load_corpus(const std::string& path, Split split, const CorpusOptions& options) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open corpus file " + path);
  try {
    return read_corpus(in, split, options);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  } catch (const DegenerateInputError&) {
    throw DegenerateInputError("empty corpus: " + path);
  }
}

void write_corpus(std::ostream& out, const Corpus& corpus) {
  for (const auto& ex : corpus.examples) {
    json turns = json::array();
    std::vector<std::string> turn;
    for (const auto& tok : ex.history) {
      if (tok == special::kTurn) {
        turns.push_back(detokenize(turn));
        turn.clear();
      } else {
        turn.push_back(tok);
      }
    }
    turns.push_back(detokenize(turn));
    json record = {{"id", ex.id},
                   {"history", turns},
                   {"response", detokenize(ex.response)},
                   {"lang", std::string(tag_string(ex.language))}};
    out << record.dump() << '\n';
  }
}

void save_corpus(const std::string& path, const Corpus& corpus) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  write_corpus(out, corpus);
}

}  // namespace chatzero
