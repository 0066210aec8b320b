#pragma once

#include <iosfwd>
#include <limits>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "chatzero/corpus.hpp"
#include "chatzero/encoding.hpp"
#include "chatzero/model.hpp"

namespace chatzero {

using Tokens = std::vector<std::string>;

class WordVectorTable {
 public:
  WordVectorTable() = default;
  explicit WordVectorTable(int dim) : dim_(dim), zero_(dim, 0.0f) {}

  void add(const std::string& token, std::vector<float> vector);
  bool contains(const std::string& token) const { return index_.count(token) != 0; }
  // Exact zero vector for unknown tokens.
  const std::vector<float>& lookup(const std::string& token) const;
  int dim() const { return dim_; }
  std::size_t size() const { return vectors_.size(); }

 private:
  int dim_ = 0;
  std::vector<std::vector<float>> vectors_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<float> zero_;
};

// "token v1 ... vd" per line. A leading "count dim" header line is skipped.
WordVectorTable read_vectors(std::istream& in);
WordVectorTable load_vectors(const std::string& path);

struct MetricsReport {
  double ppl = std::numeric_limits<double>::quiet_NaN();
  double dist1 = 0.0;
  double dist2 = 0.0;
  double bleu1 = 0.0;
  double bleu2 = 0.0;
  double rouge_l = 0.0;
  double emb_average = 0.0;
  double emb_extrema = 0.0;
  double emb_greedy = 0.0;
  std::size_t pairs = 0;
  std::size_t tokens = 0;

  // Metric names in table order, PPL first.
  static const std::vector<std::string>& names();
  double get(const std::string& name) const;
  void set(const std::string& name, double value);

  std::string to_text() const;
  static MetricsReport parse(const std::string& text);
  nlohmann::json to_json() const;
};

struct PerplexityOptions {
  TagPolicy tags;
  int batch_size = 32;
};

// exp of the mean per-token negative log-likelihood of the gold responses,
// teacher-forced, counting the closing [SEP].
double perplexity(const Seq2Seq& model, const Vocabulary& vocab, const std::vector<DialogueExample>& examples,
                  const PerplexityOptions& options = {});

double distinct_n(const std::vector<Tokens>& responses, int n);
double bleu_n(const std::vector<Tokens>& candidates, const std::vector<Tokens>& references, int n,
              bool smoothing = false);
double rouge_l(const std::vector<Tokens>& candidates, const std::vector<Tokens>& references);
std::size_t lcs_length(const Tokens& a, const Tokens& b);

enum class EmbeddingMode { Average, Extrema, Greedy };
double embedding_metric(const std::vector<Tokens>& candidates, const std::vector<Tokens>& references,
                        const WordVectorTable& vectors, EmbeddingMode mode, std::vector<std::string>* warnings = nullptr);

struct EvaluationOptions {
  bool bleu_smoothing = false;
};

// Every metric except PPL, which needs a model.
MetricsReport evaluate_responses(const std::vector<Tokens>& candidates, const std::vector<Tokens>& references,
                                 const WordVectorTable* vectors, const EvaluationOptions& options = {},
                                 std::vector<std::string>* warnings = nullptr);

struct PercentageRow {
  std::string metric;
  double zero = 0.0;
  double sup = 0.0;
  double percent = 0.0;
  bool defined = true;
};

struct PercentageTable {
  std::vector<PercentageRow> rows;
  double average = 0.0;  // over defined rows, PPL excluded
  std::vector<std::string> warnings;

  std::string to_text() const;
};

PercentageTable zero_sup_percentage(const MetricsReport& zero, const MetricsReport& sup);

}  // namespace chatzero
