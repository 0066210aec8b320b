#include "chatzero/generator.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <unistd.h>

#include "chatzero/errors.hpp"

namespace chatzero {

using nlohmann::json;

void GenerationConfig::validate() const {
  if (beam_size < 1) throw ConfigError("beam_size must be at least 1");
  if (max_len < 1) throw ConfigError("max_len must be at least 1");
  if (min_len < 0 || min_len > max_len) throw ConfigError("min_len must lie in [0, max_len]");
  if (length_penalty < 0.0) throw ConfigError("length_penalty must be non-negative");
}

ModelScorer::ModelScorer(const Seq2Seq& model, std::vector<int> tagged_history)
    : model_(model), states_(model.encode(tagged_history).states), banned_(model.config().vocab_size, 0) {
  for (int id : {Vocabulary::kPad, Vocabulary::kUnk, Vocabulary::kCls, Vocabulary::kTurn}) banned_[id] = 1;
  for (Language l : kAllLanguages) banned_[Vocabulary::tag_id(l)] = 1;
}

std::vector<std::vector<double>> ModelScorer::next_log_probs(const std::vector<std::vector<int>>& prefixes) {
  const int batch = static_cast<int>(prefixes.size());
  const int len = states_.rows, d = states_.cols;
  Matrix tiled(batch * len, d);
  for (int b = 0; b < batch; ++b) std::copy(states_.data.begin(), states_.data.end(), tiled.row(b * len).begin());
  ad::Tape tape(false);
  const auto bound = model_.bind(tape);
  EncodedBatch enc;
  enc.states = tape.constant(std::move(tiled));
  enc.lengths.assign(batch, len);
  enc.max_len = len;
  int t_max = 0;
  const Matrix& logits = model_.decode_batch(bound, enc, prefixes, &t_max).value();
  const int v = logits.cols;
  std::vector<std::vector<double>> out(batch, std::vector<double>(v));
  for (int b = 0; b < batch; ++b) {
    const auto row = logits.row(b * t_max + static_cast<int>(prefixes[b].size()) - 1);
    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < v; ++c)
      if (!banned_[c]) mx = std::max(mx, static_cast<double>(row[c]));
    double z = 0.0;
    for (int c = 0; c < v; ++c)
      if (!banned_[c]) z += std::exp(static_cast<double>(row[c]) - mx);
    const double lz = std::log(z) + mx;
    for (int c = 0; c < v; ++c)
      out[b][c] = banned_[c] ? -std::numeric_limits<double>::infinity() : static_cast<double>(row[c]) - lz;
  }
  return out;
}

double length_normalized(double log_prob, std::size_t length, double alpha) {
  if (alpha == 0.0 || length == 0) return log_prob;
  return log_prob / std::pow(static_cast<double>(length), alpha);
}

namespace {

struct Hyp {
  std::vector<int> seq;  // starts with the start token
  double log_prob = 0.0;
};

bool better(const Candidate& a, const Candidate& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.tokens < b.tokens;
}

}  // namespace

std::vector<Candidate> beam_search(StepScorer& scorer, int start_token, int end_token, const GenerationConfig& config) {
  config.validate();
  const double alpha = config.length_penalty;
  const std::size_t beam = static_cast<std::size_t>(config.beam_size);
  std::vector<Hyp> alive{{{start_token}, 0.0}};
  std::vector<Candidate> finished;
  for (int step = 0; !alive.empty(); ++step) {
    if (step == config.max_len) {
      for (const auto& h : alive)
        finished.push_back({std::vector<int>(h.seq.begin() + 1, h.seq.end()), h.log_prob,
                            length_normalized(h.log_prob, h.seq.size() - 1, alpha), false});
      break;
    }
    std::vector<std::vector<int>> prefixes;
    for (const auto& h : alive) prefixes.push_back(h.seq);
    const auto rows = scorer.next_log_probs(prefixes);
    struct Expansion {
      double log_prob;
      std::size_t hyp;
      int token;
    };
    std::vector<Expansion> ex;
    for (std::size_t i = 0; i < alive.size(); ++i)
      for (int t = 0; t < static_cast<int>(rows[i].size()); ++t)
        if (std::isfinite(rows[i][t]) && (t != end_token || step >= config.min_len))
          ex.push_back({alive[i].log_prob + rows[i][t], i, t});
    // All expansions have the same length, so raw log-probabilities rank them.
    const std::size_t keep = std::min(beam, ex.size());
    std::partial_sort(ex.begin(), ex.begin() + static_cast<std::ptrdiff_t>(keep), ex.end(),
                      [&](const Expansion& a, const Expansion& b) {
                        if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
                        if (alive[a.hyp].seq != alive[b.hyp].seq) return alive[a.hyp].seq < alive[b.hyp].seq;
                        return a.token < b.token;
                      });
    std::vector<Hyp> next;
    for (std::size_t j = 0; j < keep; ++j) {
      Hyp h{alive[ex[j].hyp].seq, ex[j].log_prob};
      if (ex[j].token == end_token) {
        const std::size_t length = h.seq.size();
        finished.push_back({std::vector<int>(h.seq.begin() + 1, h.seq.end()), h.log_prob,
                            length_normalized(h.log_prob, length, alpha), true});
      } else {
        h.seq.push_back(ex[j].token);
        next.push_back(std::move(h));
      }
    }
    alive = std::move(next);
    // Without length normalization scores only fall as hypotheses grow.
    if (alpha == 0.0 && finished.size() >= beam && !alive.empty()) {
      std::vector<double> scores;
      for (const auto& c : finished) scores.push_back(c.score);
      std::nth_element(scores.begin(), scores.begin() + static_cast<std::ptrdiff_t>(beam - 1), scores.end(),
                       std::greater<>());
      if (scores[beam - 1] > alive.front().log_prob) break;
    }
  }
  // Top-b pruning can drop the greedy path; keep it so the best candidate never
  // scores below greedy decoding.
  if (beam > 1) {
    Candidate greedy = greedy_decode(scorer, start_token, end_token, config);
    const bool present = std::any_of(finished.begin(), finished.end(), [&](const Candidate& c) {
      return c.tokens == greedy.tokens && c.finished == greedy.finished;
    });
    if (!present) finished.push_back(std::move(greedy));
  }
  std::sort(finished.begin(), finished.end(), better);
  if (finished.size() > beam) finished.resize(beam);
  return finished;
}

Candidate greedy_decode(StepScorer& scorer, int start_token, int end_token, const GenerationConfig& config) {
  config.validate();
  std::vector<int> seq{start_token};
  double lp = 0.0;
  for (int step = 0; step < config.max_len; ++step) {
    const auto row = scorer.next_log_probs({seq}).front();
    int best = -1;
    for (int t = 0; t < static_cast<int>(row.size()); ++t)
      if (std::isfinite(row[t]) && (t != end_token || step >= config.min_len) && (best < 0 || row[t] > row[best]))
        best = t;
    if (best < 0) break;
    lp += row[best];
    if (best == end_token)
      return {std::vector<int>(seq.begin() + 1, seq.end()), lp, length_normalized(lp, seq.size(), config.length_penalty),
              true};
    seq.push_back(best);
  }
  return {std::vector<int>(seq.begin() + 1, seq.end()), lp,
          length_normalized(lp, seq.size() - 1, config.length_penalty), false};
}

UnigramFiller::UnigramFiller(std::map<std::string, double> counts) : counts_(std::move(counts)) {
  double best = -1.0;
  for (const auto& [tok, c] : counts_)
    if (c > best) {
      best = c;
      top_ = tok;
    }
  if (top_.empty()) throw DegenerateInputError("unigram filler: no target tokens");
}

UnigramFiller UnigramFiller::from_corpus(const Corpus& corpus, const BilingualLexicon& lexicon) {
  std::map<std::string, double> counts;
  auto count = [&](const std::vector<std::string>& tokens) {
    for (const auto& t : tokens) {
      if (is_special_token(t)) continue;
      const auto* cands = lexicon.lookup(t);
      if (!cands) continue;
      for (const auto& c : *cands) counts[c] += 1.0 / static_cast<double>(cands->size());
    }
  };
  for (const auto& ex : corpus.examples) {
    count(ex.history);
    count(ex.response);
  }
  return UnigramFiller(std::move(counts));
}

std::vector<std::string> UnigramFiller::fill(const std::vector<std::string>&, const std::vector<std::string>& response,
                                             const std::string& placeholder) {
  std::vector<std::string> out = response;
  for (auto& t : out)
    if (t == placeholder) t = top_;
  return out;
}

std::vector<std::string> CommandFiller::fill(const std::vector<std::string>& context,
                                             const std::vector<std::string>& response,
                                             const std::string& placeholder) {
  std::string path = (std::filesystem::temp_directory_path() / "chatzero-fill-XXXXXX").string();
  const int fd = mkstemp(path.data());
  if (fd < 0) throw Error("mask filler: cannot create a temporary file");
  const std::string payload = json{{"context", context}, {"response", response}, {"placeholder", placeholder}}.dump();
  const bool wrote = write(fd, payload.data(), payload.size()) == static_cast<ssize_t>(payload.size());
  close(fd);
  if (!wrote) {
    std::filesystem::remove(path);
    throw Error("mask filler: cannot write request");
  }
  const std::string cmd = command_ + " '" + path + "'";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) {
    std::filesystem::remove(path);
    throw Error("mask filler: cannot run " + command_);
  }
  std::string output;
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) output.append(buf.data(), n);
  const int status = pclose(pipe);
  std::filesystem::remove(path);
  if (status != 0) throw Error("mask filler: command exited with status " + std::to_string(status));
  try {
    return json::parse(output).get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw Error(std::string("mask filler: bad output: ") + e.what());
  }
}

std::unique_ptr<MaskFiller> make_filler(const std::string& spec, const Corpus* corpus,
                                        const BilingualLexicon* lexicon) {
  if (spec == "identity") return std::make_unique<IdentityFiller>();
  if (spec == "unigram") {
    if (!corpus || !lexicon) throw ConfigError("unigram filler needs the training corpus and lexicon");
    return std::make_unique<UnigramFiller>(UnigramFiller::from_corpus(*corpus, *lexicon));
  }
  if (spec.rfind("command:", 0) == 0) return std::make_unique<CommandFiller>(spec.substr(8));
  throw ConfigError("unknown mask filler '" + spec + "' (identity, unigram or command:<program>)");
}

std::vector<std::string> fill_placeholders(MaskFiller& filler, const std::vector<std::string>& history,
                                           const std::vector<std::string>& response, const std::string& placeholder,
                                           std::vector<std::string>* warnings) {
  if (std::find(response.begin(), response.end(), placeholder) == response.end()) return response;
  auto warn = [&](const std::string& w) {
    if (warnings) warnings->push_back(w);
  };
  std::vector<std::string> proposed;
  try {
    proposed = filler.fill(history, response, placeholder);
  } catch (const std::exception& e) {
    warn(filler.name() + " filler failed: " + e.what());
    return response;
  }
  if (proposed.size() != response.size()) {
    warn(filler.name() + " filler returned " + std::to_string(proposed.size()) + " tokens for " +
         std::to_string(response.size()));
    return response;
  }
  std::vector<std::string> out = response;
  for (std::size_t i = 0; i < response.size(); ++i) {
    if (response[i] != placeholder) continue;
    const std::string& t = proposed[i];
    if (t.empty() || t == placeholder || is_special_token(t))
      warn(filler.name() + " filler left position " + std::to_string(i) + " unfilled");
    else
      out[i] = t;
  }
  return out;
}

double placeholder_ratio(const std::vector<std::vector<std::string>>& responses, const std::string& placeholder) {
  std::size_t total = 0, masked = 0;
  for (const auto& r : responses) {
    total += r.size();
    masked += static_cast<std::size_t>(std::count(r.begin(), r.end(), placeholder));
  }
  if (total == 0) throw DegenerateInputError("placeholder_ratio: no tokens");
  return static_cast<double>(masked) / static_cast<double>(total);
}

json GenerationRecord::to_json() const {
  json cands = json::array();
  for (const auto& [tokens, score] : candidates) cands.push_back({{"tokens", tokens}, {"score", score}});
  return {{"id", id},         {"input_tag", input_tag}, {"candidates", cands},
          {"response", response}, {"filled", filled},   {"placeholder_positions", placeholder_positions}};
}

GenerationRecord GenerationRecord::from_json(const json& j) {
  GenerationRecord r;
  r.id = j.at("id").get<std::string>();
  r.input_tag = j.at("input_tag").get<std::string>();
  for (const auto& c : j.at("candidates"))
    r.candidates.emplace_back(c.at("tokens").get<std::vector<std::string>>(), c.at("score").get<double>());
  r.response = j.at("response").get<std::vector<std::string>>();
  r.filled = j.at("filled").get<std::vector<std::string>>();
  r.placeholder_positions = j.at("placeholder_positions").get<std::vector<int>>();
  return r;
}

std::vector<GenerationRecord> generate(const Seq2Seq& model, const Vocabulary& vocab,
                                       const std::vector<DialogueExample>& examples, const GenerationConfig& config,
                                       MaskFiller& filler, std::vector<std::string>* warnings) {
  config.validate();
  GenerationConfig cfg = config;
  cfg.max_len = std::min(cfg.max_len, model.config().max_decoder_positions - 1);
  cfg.min_len = std::min(cfg.min_len, cfg.max_len);
  std::vector<GenerationRecord> records(examples.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& ex = examples[i];
    ModelScorer scorer(model, encode_history(ex, vocab, model.config(), cfg.tags));
    const auto cands =
        beam_search(scorer, Vocabulary::tag_id(decode_tag(ex, cfg.tags)), Vocabulary::kSep, cfg);
    GenerationRecord& r = records[i];
    r.id = ex.id;
    r.input_tag = std::string(tag_string(cfg.tags.input_tag.value_or(ex.language)));
    for (const auto& c : cands) r.candidates.emplace_back(vocab.strings(c.tokens), c.score);
    if (!r.candidates.empty()) r.response = r.candidates.front().first;
  }
  const std::string placeholder(special::kMask);
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto& r = records[i];
    for (std::size_t p = 0; p < r.response.size(); ++p)
      if (r.response[p] == placeholder) r.placeholder_positions.push_back(static_cast<int>(p));
    std::vector<std::string> local;
    r.filled = fill_placeholders(filler, examples[i].history, r.response, placeholder, &local);
    if (warnings)
      for (auto& w : local) warnings->push_back(r.id + ": " + w);
  }
  return records;
}

void write_generations(std::ostream& out, const std::vector<GenerationRecord>& records) {
  for (const auto& r : records) out << r.to_json().dump() << '\n';
}

std::vector<GenerationRecord> read_generations(std::istream& in) {
  std::vector<GenerationRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(GenerationRecord::from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw ParseError(std::string("generation record: ") + e.what(), line_no);
    }
  }
  return out;
}

}  // namespace chatzero
