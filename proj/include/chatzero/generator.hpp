#pragma once

#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "chatzero/corpus.hpp"
#include "chatzero/encoding.hpp"
#include "chatzero/lexicon.hpp"
#include "chatzero/model.hpp"

namespace chatzero {

struct GenerationConfig {
  int beam_size = 6;
  int max_len = 50;
  // The end token is blocked until this many tokens have been produced.
  int min_len = 1;
  double length_penalty = 0.0;
  TagPolicy tags;

  void validate() const;
};

// Next-token log-probabilities for a set of prefixes.
class StepScorer {
 public:
  virtual ~StepScorer() = default;
  virtual int vocab_size() const = 0;
  // One row of vocab_size() log-probabilities per prefix. Banned tokens carry
  // -infinity.
  virtual std::vector<std::vector<double>> next_log_probs(const std::vector<std::vector<int>>& prefixes) = 0;
};

// Scores continuations of one encoded history. Padding, [CLS], [UNK], [TURN]
// and language tags are never generated.
class ModelScorer : public StepScorer {
 public:
  ModelScorer(const Seq2Seq& model, std::vector<int> tagged_history);
  int vocab_size() const override { return model_.config().vocab_size; }
  std::vector<std::vector<double>> next_log_probs(const std::vector<std::vector<int>>& prefixes) override;

 private:
  const Seq2Seq& model_;
  Matrix states_;
  std::vector<char> banned_;
};

struct Candidate {
  std::vector<int> tokens;  // without the start token and the end token
  double log_prob = 0.0;
  double score = 0.0;
  bool finished = false;  // ended with the end token rather than at max_len
};

// Candidates ranked by score, ties broken by token-id order.
std::vector<Candidate> beam_search(StepScorer& scorer, int start_token, int end_token, const GenerationConfig& config);
Candidate greedy_decode(StepScorer& scorer, int start_token, int end_token, const GenerationConfig& config);

// Normalized score of a hypothesis of the given log-probability and length
// (generated tokens including the end token).
double length_normalized(double log_prob, std::size_t length, double alpha);

class MaskFiller {
 public:
  virtual ~MaskFiller() = default;
  virtual std::string name() const = 0;
  // Returns the response with placeholders replaced; the invariants are
  // enforced by fill_placeholders.
  virtual std::vector<std::string> fill(const std::vector<std::string>& context,
                                        const std::vector<std::string>& response, const std::string& placeholder) = 0;
};

class IdentityFiller : public MaskFiller {
 public:
  std::string name() const override { return "identity"; }
  std::vector<std::string> fill(const std::vector<std::string>&, const std::vector<std::string>& response,
                                const std::string&) override {
    return response;
  }
};

// Replaces every placeholder with the most frequent target-language token.
class UnigramFiller : public MaskFiller {
 public:
  explicit UnigramFiller(std::map<std::string, double> counts);
  // Target candidates weighted by how often their source word occurs in the
  // corpus; a word with c candidates gives each 1/c per occurrence.
  static UnigramFiller from_corpus(const Corpus& corpus, const BilingualLexicon& lexicon);
  std::string name() const override { return "unigram"; }
  std::vector<std::string> fill(const std::vector<std::string>& context, const std::vector<std::string>& response,
                                const std::string& placeholder) override;
  const std::string& top() const { return top_; }

 private:
  std::map<std::string, double> counts_;
  std::string top_;
};

// Runs an external masked-LM adapter. The command receives the path of a JSON
// file {"context": [...], "response": [...], "placeholder": "..."} as its last
// argument and prints the filled response as a JSON array of tokens.
class CommandFiller : public MaskFiller {
 public:
  explicit CommandFiller(std::string command) : command_(std::move(command)) {}
  std::string name() const override { return "command"; }
  std::vector<std::string> fill(const std::vector<std::string>& context, const std::vector<std::string>& response,
                                const std::string& placeholder) override;

 private:
  std::string command_;
};

std::unique_ptr<MaskFiller> make_filler(const std::string& spec, const Corpus* corpus, const BilingualLexicon* lexicon);

std::vector<std::string> fill_placeholders(MaskFiller& filler, const std::vector<std::string>& history,
                                           const std::vector<std::string>& response,
                                           const std::string& placeholder = std::string(special::kMask),
                                           std::vector<std::string>* warnings = nullptr);

double placeholder_ratio(const std::vector<std::vector<std::string>>& responses,
                         const std::string& placeholder = std::string(special::kMask));

struct GenerationRecord {
  std::string id;
  std::string input_tag;
  std::vector<std::pair<std::vector<std::string>, double>> candidates;
  std::vector<std::string> response;  // top candidate before filling
  std::vector<std::string> filled;
  std::vector<int> placeholder_positions;

  nlohmann::json to_json() const;
  static GenerationRecord from_json(const nlohmann::json& j);
};

std::vector<GenerationRecord> generate(const Seq2Seq& model, const Vocabulary& vocab,
                                       const std::vector<DialogueExample>& examples, const GenerationConfig& config,
                                       MaskFiller& filler, std::vector<std::string>* warnings = nullptr);

void write_generations(std::ostream& out, const std::vector<GenerationRecord>& records);
std::vector<GenerationRecord> read_generations(std::istream& in);

}  // namespace chatzero
