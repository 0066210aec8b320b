#include "chatzero/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "chatzero/errors.hpp"
#include "chatzero/omp.hpp"

namespace chatzero {

void WordVectorTable::add(const std::string& token, std::vector<float> vector) {
  if (dim_ == 0) dim_ = static_cast<int>(vector.size());
  if (static_cast<int>(zero_.size()) != dim_) zero_.assign(dim_, 0.0f);
  if (static_cast<int>(vector.size()) != dim_)
    throw ShapeError("vector for '" + token + "' has dimension " + std::to_string(vector.size()) + ", expected " +
                     std::to_string(dim_));
  auto it = index_.find(token);
  if (it != index_.end()) {
    vectors_[it->second] = std::move(vector);
    return;
  }
  index_.emplace(token, vectors_.size());
  vectors_.push_back(std::move(vector));
}

const std::vector<float>& WordVectorTable::lookup(const std::string& token) const {
  auto it = index_.find(token);
  if (it != index_.end()) return vectors_[it->second];
  return zero_;
}

WordVectorTable read_vectors(std::istream& in) {
  WordVectorTable table;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::string token;
    if (!(fields >> token)) continue;
    std::vector<float> v;
    std::string num;
    while (fields >> num) {
      try {
        std::size_t used = 0;
        v.push_back(std::stof(num, &used));
        if (used != num.size()) throw std::invalid_argument(num);
      } catch (const std::exception&) {
        throw ParseError("bad vector component '" + num + "'", line_no);
      }
    }
    if (line_no == 1 && v.size() == 1) continue;  // word2vec "count dim" header
    if (v.empty()) throw ParseError("vector line without components", line_no);
    try {
      table.add(token, std::move(v));
    } catch (const ShapeError& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  return table;
}

WordVectorTable load_vectors(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open vector file: " + path);
  return read_vectors(in);
}

const std::vector<std::string>& MetricsReport::names() {
  static const std::vector<std::string> n = {"ppl",     "dist1",   "dist2",       "bleu1",       "bleu2",
                                             "rouge_l", "emb_average", "emb_extrema", "emb_greedy"};
  return n;
}

double MetricsReport::get(const std::string& name) const {
  if (name == "ppl") return ppl;
  if (name == "dist1") return dist1;
  if (name == "dist2") return dist2;
  if (name == "bleu1") return bleu1;
  if (name == "bleu2") return bleu2;
  if (name == "rouge_l") return rouge_l;
  if (name == "emb_average") return emb_average;
  if (name == "emb_extrema") return emb_extrema;
  if (name == "emb_greedy") return emb_greedy;
  throw ConfigError("unknown metric: " + name);
}

void MetricsReport::set(const std::string& name, double value) {
  if (name == "ppl") ppl = value;
  else if (name == "dist1") dist1 = value;
  else if (name == "dist2") dist2 = value;
  else if (name == "bleu1") bleu1 = value;
  else if (name == "bleu2") bleu2 = value;
  else if (name == "rouge_l") rouge_l = value;
  else if (name == "emb_average") emb_average = value;
  else if (name == "emb_extrema") emb_extrema = value;
  else if (name == "emb_greedy") emb_greedy = value;
  else if (name == "pairs") pairs = static_cast<std::size_t>(value);
  else if (name == "tokens") tokens = static_cast<std::size_t>(value);
  else throw ConfigError("unknown metric: " + name);
}

std::string MetricsReport::to_text() const {
  std::ostringstream out;
  out << std::setprecision(17);
  for (const auto& n : names()) {
    const double v = get(n);
    if (std::isnan(v)) out << n << " = nan\n";
    else out << n << " = " << v << '\n';
  }
  out << "pairs = " << pairs << "\ntokens = " << tokens << '\n';
  return out.str();
}

MetricsReport MetricsReport::parse(const std::string& text) {
  MetricsReport r;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      throw ParseError("expected 'name = value'", line_no);
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    double v = 0.0;
    if (value == "nan") {
      v = std::numeric_limits<double>::quiet_NaN();
    } else {
      try {
        std::size_t used = 0;
        v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
      } catch (const std::exception&) {
        throw ParseError("bad value for " + key, line_no);
      }
    }
    try {
      r.set(key, v);
    } catch (const ConfigError& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  return r;
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json j;
  for (const auto& n : names()) {
    const double v = get(n);
    j[n] = std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v);
  }
  j["pairs"] = pairs;
  j["tokens"] = tokens;
  return j;
}

double perplexity(const Seq2Seq& model, const Vocabulary& vocab, const std::vector<DialogueExample>& examples,
                  const PerplexityOptions& options) {
  if (examples.empty()) throw DegenerateInputError("perplexity: empty split");
  const int batch = std::max(options.batch_size, 1);
  const int v = model.config().vocab_size;
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t start = 0; start < examples.size(); start += batch) {
    const std::size_t end = std::min(examples.size(), start + batch);
    std::vector<std::vector<int>> enc_in, dec_in, targets;
    for (std::size_t i = start; i < end; ++i) {
      enc_in.push_back(encode_history(examples[i], vocab, model.config(), options.tags));
      auto tf = teacher_forcing(examples[i].response, decode_tag(examples[i], options.tags), vocab, model.config());
      dec_in.push_back(std::move(tf.input));
      targets.push_back(std::move(tf.target));
    }
    ad::Tape tape(false);
    const auto bound = model.bind(tape);
    const auto enc = model.encode_batch(bound, enc_in);
    int t_max = 0;
    const Matrix& logits = model.decode_batch(bound, enc, dec_in, &t_max).value();
    for (std::size_t s = 0; s < targets.size(); ++s) {
      for (std::size_t i = 0; i < targets[s].size(); ++i) {
        const float* row = logits.data.data() + (s * t_max + i) * static_cast<std::size_t>(v);
        double mx = row[0];
        for (int c = 1; c < v; ++c) mx = std::max(mx, static_cast<double>(row[c]));
        double z = 0.0;
        for (int c = 0; c < v; ++c) z += std::exp(static_cast<double>(row[c]) - mx);
        total += std::log(z) - (static_cast<double>(row[targets[s][i]]) - mx);
        ++count;
      }
    }
  }
  return std::exp(total / static_cast<double>(count));
}

double distinct_n(const std::vector<Tokens>& responses, int n) {
  if (n < 1) throw ConfigError("distinct_n: n must be positive");
  if (responses.empty()) throw DegenerateInputError("distinct_n: no responses");
  std::set<std::vector<std::string>> seen;
  std::size_t total = 0;
  for (const auto& r : responses) {
    for (std::size_t i = 0; i + n <= r.size(); ++i) {
      seen.emplace(r.begin() + i, r.begin() + i + n);
      ++total;
    }
  }
  if (total == 0) throw DegenerateInputError("distinct_n: no " + std::to_string(n) + "-grams");
  return static_cast<double>(seen.size()) / static_cast<double>(total);
}

namespace {

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

NgramCounts ngrams(const Tokens& t, int n) {
  NgramCounts c;
  for (std::size_t i = 0; i + n <= t.size(); ++i) ++c[std::vector<std::string>(t.begin() + i, t.begin() + i + n)];
  return c;
}

void check_pairs(const std::vector<Tokens>& c, const std::vector<Tokens>& r, const char* what) {
  if (c.empty()) throw DegenerateInputError(std::string(what) + ": empty candidate set");
  if (c.size() != r.size())
    throw ShapeError(std::string(what) + ": " + std::to_string(c.size()) + " candidates but " +
                     std::to_string(r.size()) + " references");
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<std::vector<double>> known_vectors(const Tokens& t, const WordVectorTable& table) {
  std::vector<std::vector<double>> out;
  for (const auto& tok : t) {
    if (!table.contains(tok)) continue;
    const auto& v = table.lookup(tok);
    out.emplace_back(v.begin(), v.end());
  }
  return out;
}

double greedy_direction(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b) {
  double sum = 0.0;
  for (const auto& x : a) {
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& y : b) best = std::max(best, cosine(x, y));
    sum += best;
  }
  return sum / static_cast<double>(a.size());
}

}  // namespace

double bleu_n(const std::vector<Tokens>& candidates, const std::vector<Tokens>& references, int n, bool smoothing) {
  check_pairs(candidates, references, "bleu");
  if (n < 1) throw ConfigError("bleu: order must be positive");
  std::vector<double> matches(n, 0.0), totals(n, 0.0);
  double cand_len = 0.0, ref_len = 0.0;
  for (std::size_t p = 0; p < candidates.size(); ++p) {
    cand_len += static_cast<double>(candidates[p].size());
    ref_len += static_cast<double>(references[p].size());
    for (int m = 1; m <= n; ++m) {
      const auto cc = ngrams(candidates[p], m);
      const auto rc = ngrams(references[p], m);
      for (const auto& [g, count] : cc) {
        auto it = rc.find(g);
        if (it != rc.end()) matches[m - 1] += static_cast<double>(std::min(count, it->second));
        totals[m - 1] += static_cast<double>(count);
      }
    }
  }
  if (cand_len == 0.0) return 0.0;
  double product = 1.0;
  for (int m = 0; m < n; ++m) {
    double p = 0.0;
    if (smoothing && m > 0) p = (matches[m] + 1.0) / (totals[m] + 1.0);
    else if (totals[m] > 0.0) p = matches[m] / totals[m];
    if (p == 0.0) return 0.0;
    product *= p;
  }
  const double bp = cand_len > ref_len ? 1.0 : std::exp(1.0 - ref_len / cand_len);
  return bp * std::pow(product, 1.0 / n);
}

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(const std::vector<Tokens>& candidates, const std::vector<Tokens>& references) {
  check_pairs(candidates, references, "rouge_l");
  std::vector<double> scores(candidates.size(), 0.0);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t p = 0; p < candidates.size(); ++p) {
    const double l = static_cast<double>(lcs_length(candidates[p], references[p]));
    if (l == 0.0) continue;
    const double prec = l / static_cast<double>(candidates[p].size());
    const double rec = l / static_cast<double>(references[p].size());
    scores[p] = 2.0 * prec * rec / (prec + rec);
  }
  double sum = 0.0;
  for (double s : scores) sum += s;
  return sum / static_cast<double>(scores.size());
}

double embedding_metric(const std::vector<Tokens>& candidates, const std::vector<Tokens>& references,
                        const WordVectorTable& vectors, EmbeddingMode mode, std::vector<std::string>* warnings) {
  check_pairs(candidates, references, "embedding_metric");
  if (vectors.dim() == 0) throw ConfigError("embedding_metric: empty vector table");
  const int d = vectors.dim();
  std::vector<double> scores(candidates.size(), 0.0);
  std::vector<char> empty(candidates.size(), 0);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t p = 0; p < candidates.size(); ++p) {
    const auto c = known_vectors(candidates[p], vectors);
    const auto r = known_vectors(references[p], vectors);
    if (c.empty() || r.empty()) {
      empty[p] = 1;
      continue;
    }
    if (mode == EmbeddingMode::Greedy) {
      scores[p] = 0.5 * (greedy_direction(c, r) + greedy_direction(r, c));
      continue;
    }
    auto reduce = [&](const std::vector<std::vector<double>>& vs) {
      std::vector<double> out(d, 0.0);
      for (const auto& v : vs)
        for (int i = 0; i < d; ++i) {
          if (mode == EmbeddingMode::Average) out[i] += v[i];
          else if (std::abs(v[i]) > std::abs(out[i])) out[i] = v[i];
        }
      if (mode == EmbeddingMode::Average)
        for (auto& x : out) x /= static_cast<double>(vs.size());
      return out;
    };
    scores[p] = cosine(reduce(c), reduce(r));
  }
  double sum = 0.0;
  for (std::size_t p = 0; p < scores.size(); ++p) {
    sum += scores[p];
    if (empty[p] && warnings)
      warnings->push_back("pair " + std::to_string(p) + " has a sentence without known word vectors; scored 0");
  }
  return sum / static_cast<double>(scores.size());
}

MetricsReport evaluate_responses(const std::vector<Tokens>& candidates, const std::vector<Tokens>& references,
                                 const WordVectorTable* vectors, const EvaluationOptions& options,
                                 std::vector<std::string>* warnings) {
  check_pairs(candidates, references, "evaluate");
  MetricsReport r;
  r.pairs = candidates.size();
  for (const auto& c : candidates) r.tokens += c.size();
  auto guarded = [&](const char* name, auto fn) {
    try {
      return fn();
    } catch (const DegenerateInputError& e) {
      if (warnings) warnings->push_back(std::string(name) + ": " + e.what());
      return 0.0;
    }
  };
  r.dist1 = guarded("dist1", [&] { return distinct_n(candidates, 1); });
  r.dist2 = guarded("dist2", [&] { return distinct_n(candidates, 2); });
  r.bleu1 = bleu_n(candidates, references, 1, options.bleu_smoothing);
  r.bleu2 = bleu_n(candidates, references, 2, options.bleu_smoothing);
  r.rouge_l = rouge_l(candidates, references);
  if (vectors) {
    r.emb_average = embedding_metric(candidates, references, *vectors, EmbeddingMode::Average, warnings);
    r.emb_extrema = embedding_metric(candidates, references, *vectors, EmbeddingMode::Extrema, nullptr);
    r.emb_greedy = embedding_metric(candidates, references, *vectors, EmbeddingMode::Greedy, nullptr);
  } else {
    r.emb_average = r.emb_extrema = r.emb_greedy = std::numeric_limits<double>::quiet_NaN();
  }
  return r;
}

PercentageTable zero_sup_percentage(const MetricsReport& zero, const MetricsReport& sup) {
  PercentageTable t;
  double sum = 0.0;
  int n = 0;
  for (const auto& name : MetricsReport::names()) {
    PercentageRow row;
    row.metric = name;
    row.zero = zero.get(name);
    row.sup = sup.get(name);
    if (std::isnan(row.zero) || std::isnan(row.sup) || row.sup == 0.0) {
      row.defined = false;
      t.warnings.push_back(name + ": percentage undefined (" +
                           (row.sup == 0.0 ? std::string("supervised score is 0") : std::string("missing score")) +
                           ")");
    } else {
      row.percent = 100.0 * row.zero / row.sup;
      if (name != "ppl") {
        sum += row.percent;
        ++n;
      }
    }
    t.rows.push_back(row);
  }
  t.average = n > 0 ? sum / n : std::numeric_limits<double>::quiet_NaN();
  return t;
}

std::string PercentageTable::to_text() const {
  std::ostringstream out;
  out << std::left << std::setw(12) << "metric" << std::right << std::setw(12) << "zero" << std::setw(12) << "sup"
      << std::setw(10) << "Per(%)" << '\n';
  out << std::fixed;
  for (const auto& r : rows) {
    out << std::left << std::setw(12) << r.metric << std::right << std::setprecision(4) << std::setw(12) << r.zero
        << std::setw(12) << r.sup << std::setw(10);
    if (r.defined) out << std::setprecision(2) << r.percent;
    else out << "undef";
    out << '\n';
  }
  out << std::left << std::setw(12) << "AVE" << std::right << std::setw(34) << std::setprecision(2) << average
      << '\n';
  return out.str();
}

}  // namespace chatzero
