#include "chatzero/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>

#include "chatzero/errors.hpp"
#include "chatzero/random.hpp"

namespace fs = std::filesystem;

namespace chatzero {

namespace {

std::string make_word(Rng& rng, const std::string& consonants, const std::string& vowels, std::set<std::string>& used) {
  for (;;) {
    const int syllables = 2 + static_cast<int>(rng.index(2));
    std::string w;
    for (int s = 0; s < syllables; ++s) {
      w += consonants[rng.index(consonants.size())];
      w += vowels[rng.index(vowels.size())];
    }
    if (used.insert(w).second) return w;
  }
}

struct Language2 {
  std::vector<std::string> function;
  std::vector<std::vector<std::string>> topics;
  // Per topic: its words plus the function words, in the order of a random
  // cycle. Walks mostly step to the next word of the cycle.
  std::vector<std::vector<std::string>> cycles;
};

// Continues a walk on the topic cycle from position `at` (-1 starts afresh).
std::vector<std::string> walk(Rng& rng, const Language2& lang, int topic, int& at, const SyntheticSpec& spec) {
  const auto& cycle = lang.cycles[topic];
  const int n = static_cast<int>(cycle.size());
  const int len = spec.min_sentence + static_cast<int>(rng.index(spec.max_sentence - spec.min_sentence + 1));
  std::vector<std::string> out;
  for (int i = 0; i < len; ++i) {
    if (rng.uniform() < spec.chain_strength) at = at < 0 ? 0 : (at + 1) % n;
    else at = static_cast<int>(rng.index(n));
    out.push_back(cycle[at]);
  }
  return out;
}

Corpus make_split(Rng& rng, const Language2& lang, const SyntheticSpec& spec, Split split, int count,
                  const std::string& prefix) {
  Corpus c;
  c.split = split;
  for (int i = 0; i < count; ++i) {
    const int topic = static_cast<int>(rng.index(lang.topics.size()));
    DialogueExample ex;
    ex.id = prefix + std::to_string(i);
    ex.language = spec.source;
    const int turns = 1 + static_cast<int>(rng.index(spec.max_turns));
    int at = -1;
    for (int t = 0; t < turns; ++t) {
      if (t > 0) ex.history.emplace_back(special::kTurn);
      const auto s = walk(rng, lang, topic, at, spec);
      ex.history.insert(ex.history.end(), s.begin(), s.end());
    }
    ex.response = walk(rng, lang, topic, at, spec);
    c.examples.push_back(std::move(ex));
  }
  return c;
}

std::vector<std::string> translate(const std::vector<std::string>& tokens, const std::map<std::string, std::string>& t) {
  std::vector<std::string> out;
  for (const auto& w : tokens) {
    auto it = t.find(w);
    out.push_back(it == t.end() ? w : it->second);
  }
  return out;
}

}  // namespace

SyntheticCorpus make_synthetic(const SyntheticSpec& spec) {
  if (spec.topics < 1 || spec.words_per_topic < 1 || spec.function_words < 1)
    throw ConfigError("synthetic: topics, words_per_topic and function_words must be positive");
  if (spec.train < 2 || spec.valid < 1 || spec.test < 1) throw ConfigError("synthetic: split sizes too small");
  if (!(spec.chain_strength >= 0.0 && spec.chain_strength <= 1.0))
    throw ConfigError("synthetic: chain_strength must lie in [0, 1]");
  if (!(spec.coverage >= 0.0 && spec.coverage <= 1.0)) throw ConfigError("synthetic: coverage must lie in [0, 1]");
  if (spec.min_sentence < 1 || spec.max_sentence < spec.min_sentence)
    throw ConfigError("synthetic: bad sentence length range");
  Rng rng(spec.seed);
  std::set<std::string> used;
  const std::string src_c = "kmnprstl", src_v = "aeiou";
  const std::string tgt_c = "bdfgvzhj", tgt_v = "aeiouy";

  Language2 src, tgt;
  for (int i = 0; i < spec.function_words; ++i) src.function.push_back(make_word(rng, src_c, src_v, used));
  for (int t = 0; t < spec.topics; ++t) {
    src.topics.emplace_back();
    for (int i = 0; i < spec.words_per_topic; ++i) src.topics.back().push_back(make_word(rng, src_c, src_v, used));
  }
  SyntheticCorpus out;
  out.lexicon = BilingualLexicon(spec.source, spec.target);
  for (const auto& w : src.function) {
    tgt.function.push_back(make_word(rng, tgt_c, tgt_v, used));
    out.translation[w] = tgt.function.back();
    out.stopwords.insert(w);
  }
  std::vector<std::string> content;
  for (const auto& topic : src.topics) {
    tgt.topics.emplace_back();
    for (const auto& w : topic) {
      tgt.topics.back().push_back(make_word(rng, tgt_c, tgt_v, used));
      out.translation[w] = tgt.topics.back().back();
      content.push_back(w);
    }
  }

  // Function words are always covered; a fixed share of content words is.
  for (const auto& w : src.function) out.lexicon.add(w, out.translation[w]);
  std::vector<std::string> shuffled = content;
  for (std::size_t i = shuffled.size(); i > 1; --i) std::swap(shuffled[i - 1], shuffled[rng.index(i)]);
  const auto covered = static_cast<std::size_t>(std::lround(spec.coverage * static_cast<double>(content.size())));
  std::vector<std::string> extra_targets;
  for (std::size_t i = 0; i < covered; ++i) {
    const std::string& w = shuffled[i];
    out.lexicon.add(w, out.translation[w]);
    if (rng.uniform() < spec.second_candidate_rate) {
      extra_targets.push_back(make_word(rng, tgt_c, tgt_v, used));
      out.lexicon.add(w, extra_targets.back());
    }
  }

  for (const auto& topic : src.topics) {
    auto cycle = topic;
    cycle.insert(cycle.end(), src.function.begin(), src.function.end());
    for (std::size_t i = cycle.size(); i > 1; --i) std::swap(cycle[i - 1], cycle[rng.index(i)]);
    src.cycles.push_back(std::move(cycle));
  }

  out.train = make_split(rng, src, spec, Split::Train, spec.train, "train-");
  out.valid = make_split(rng, src, spec, Split::Valid, spec.valid, "valid-");
  out.test = make_split(rng, src, spec, Split::Test, spec.test, "test-");
  for (auto& ex : out.test.examples) {
    ex.history = translate(ex.history, out.translation);
    ex.response = translate(ex.response, out.translation);
    ex.language = spec.target;
  }

  out.target_vocabulary = tgt.function;
  for (const auto& t : tgt.topics) out.target_vocabulary.insert(out.target_vocabulary.end(), t.begin(), t.end());
  out.target_vocabulary.insert(out.target_vocabulary.end(), extra_targets.begin(), extra_targets.end());
  std::sort(out.target_vocabulary.begin(), out.target_vocabulary.end());

  // Topic words cluster around a topic direction; function words are diffuse.
  const int d = spec.vector_dim;
  out.target_vectors = WordVectorTable(d);
  auto noise = [&](double s) {
    std::vector<float> v(d);
    for (auto& x : v) x = static_cast<float>(s * rng.normal());
    return v;
  };
  for (const auto& w : tgt.function) out.target_vectors.add(w, noise(1.0));
  for (const auto& topic : tgt.topics) {
    const auto centre = noise(1.0);
    for (const auto& w : topic) {
      auto v = noise(0.4);
      for (int i = 0; i < d; ++i) v[i] += centre[i];
      out.target_vectors.add(w, v);
    }
  }
  for (const auto& w : extra_targets) out.target_vectors.add(w, noise(1.0));
  return out;
}

void save_synthetic(const SyntheticCorpus& data, const std::string& dir) {
  fs::create_directories(dir);
  const fs::path root(dir);
  save_corpus((root / "train.jsonl").string(), data.train);
  save_corpus((root / "valid.jsonl").string(), data.valid);
  save_corpus((root / "test.jsonl").string(), data.test);
  {
    std::ofstream out(root / "lexicon.txt");
    for (const auto& key : data.lexicon.keys())
      for (const auto& c : *data.lexicon.lookup(key)) out << key << ' ' << c << '\n';
  }
  {
    std::vector<std::string> words(data.stopwords.begin(), data.stopwords.end());
    std::sort(words.begin(), words.end());
    std::ofstream out(root / "stopwords.txt");
    for (const auto& w : words) out << w << '\n';
  }
  {
    std::ofstream out(root / "vectors.txt");
    out << std::setprecision(9);
    for (const auto& w : data.target_vocabulary) {
      out << w;
      for (float x : data.target_vectors.lookup(w)) out << ' ' << x;
      out << '\n';
    }
  }
}

std::vector<Tokens> random_responses(const std::vector<Tokens>& references, const std::vector<std::string>& vocabulary,
                                     std::uint64_t seed) {
  if (vocabulary.empty()) throw DegenerateInputError("random_responses: empty vocabulary");
  Rng rng(seed);
  std::vector<Tokens> out;
  for (const auto& r : references) {
    Tokens t;
    for (std::size_t i = 0; i < r.size(); ++i) t.push_back(vocabulary[rng.index(vocabulary.size())]);
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace chatzero
