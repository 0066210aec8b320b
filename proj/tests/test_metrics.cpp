#include <doctest.h>

#include <cmath>
#include <sstream>

#include "chatzero/errors.hpp"
#include "chatzero/metrics.hpp"
#include "chatzero/random.hpp"
#include "oracles.hpp"

using namespace chatzero;

namespace {

std::vector<Tokens> random_sentences(int count, Rng& rng, int vocab = 6, int max_len = 7) {
  std::vector<Tokens> out(count);
  for (auto& s : out) {
    const int len = 1 + static_cast<int>(rng.index(max_len));
    for (int i = 0; i < len; ++i) s.push_back("t" + std::to_string(rng.index(vocab)));
  }
  return out;
}

WordVectorTable random_table(int vocab, int dim, Rng& rng) {
  WordVectorTable t(dim);
  for (int i = 0; i < vocab; ++i) {
    std::vector<float> v(dim);
    for (auto& x : v) x = static_cast<float>(rng.normal());
    t.add("t" + std::to_string(i), v);
  }
  return t;
}

std::vector<oracle::Vec> vectors_of(const Tokens& s, const WordVectorTable& t) {
  std::vector<oracle::Vec> out;
  for (const auto& w : s)
    if (t.contains(w)) out.push_back(oracle::to_double(t.lookup(w)));
  return out;
}

Vocabulary word_vocab(int n) {
  Vocabulary v;
  for (int i = 0; i < n; ++i) v.add("t" + std::to_string(i));
  return v;
}

ModelConfig tiny_model(const Vocabulary& v) {
  ModelConfig c;
  c.layers = 1;
  c.heads = 2;
  c.hidden = 8;
  c.ffn = 16;
  c.vocab_size = v.size();
  c.max_positions = 32;
  c.max_decoder_positions = 12;
  c.seed = 9;
  return c;
}

}  // namespace

TEST_CASE("distinct-n") {
  CHECK(distinct_n({{"a", "a", "b"}}, 1) == doctest::Approx(2.0 / 3));
  CHECK(distinct_n({{"a", "b", "c"}}, 1) == 1.0);
  CHECK(distinct_n({{"a", "b"}, {"a", "b"}}, 2) == 0.5);
  Rng rng(1);
  const auto rs = random_sentences(40, rng);
  for (int n : {1, 2}) CHECK(std::abs(distinct_n(rs, n) - oracle::distinct(rs, n)) < 1e-12);
  auto twice = rs;
  twice.insert(twice.end(), rs.begin(), rs.end());
  CHECK(distinct_n(twice, 1) <= distinct_n(rs, 1));
  CHECK_THROWS_AS(distinct_n({{"a"}}, 2), DegenerateInputError);
}

TEST_CASE("BLEU matches naive counting") {
  CHECK(bleu_n({{"the", "cat", "sat"}}, {{"the", "cat", "sat"}}, 2) == doctest::Approx(1.0));
  CHECK(bleu_n({{"the", "cat", "sat"}}, {{"the", "cat", "ate"}}, 1) == doctest::Approx(2.0 / 3));
  Rng rng(2);
  const auto c = random_sentences(100, rng), r = random_sentences(100, rng);
  for (int n : {1, 2}) CHECK(std::abs(bleu_n(c, r, n) - oracle::bleu(c, r, n)) < 1e-9);
  std::vector<Tokens> cr(c.rbegin(), c.rend()), rr(r.rbegin(), r.rend());
  CHECK(std::abs(bleu_n(cr, rr, 2) - bleu_n(c, r, 2)) < 1e-12);
  CHECK(bleu_n({{"a", "y"}}, {{"a", "b"}}, 2) == 0.0);
  CHECK(bleu_n({{"a", "y"}}, {{"a", "b"}}, 2, true) == doctest::Approx(0.5));
}

TEST_CASE("ROUGE-L matches a dynamic-programming oracle") {
  CHECK(rouge_l({{"a", "b", "c"}}, {{"a", "b", "c"}}) == 1.0);
  CHECK(rouge_l({{"a", "b"}}, {{"c", "d"}}) == 0.0);
  Rng rng(3);
  const auto c = random_sentences(100, rng), r = random_sentences(100, rng);
  for (int i = 0; i < 100; ++i) CHECK(lcs_length(c[i], r[i]) == oracle::lcs(c[i], r[i]));
  CHECK(std::abs(rouge_l(c, r) - oracle::rouge_l(c, r)) < 1e-12);
}

TEST_CASE("embedding metrics") {
  Rng rng(4);
  const auto table = random_table(6, 5, rng);
  const std::vector<Tokens> same{{"t0", "t1", "t2"}};
  for (auto m : {EmbeddingMode::Average, EmbeddingMode::Extrema, EmbeddingMode::Greedy})
    CHECK(embedding_metric(same, same, table, m) == doctest::Approx(1.0).epsilon(1e-9));

  WordVectorTable axes(2);
  axes.add("x", {1, 0});
  axes.add("y", {0, 1});
  CHECK(embedding_metric({{"x", "x"}}, {{"y"}}, axes, EmbeddingMode::Average) == 0.0);

  const auto c = random_sentences(100, rng, 8, 5), r = random_sentences(100, rng, 8, 5);
  std::vector<std::string> warnings;
  double expected = 0;
  int scored = 0;
  for (int i = 0; i < 100; ++i) {
    const auto cv = vectors_of(c[i], table), rv = vectors_of(r[i], table);
    ++scored;
    if (!cv.empty() && !rv.empty()) expected += oracle::greedy_matching(cv, rv);
  }
  CHECK(std::abs(embedding_metric(c, r, table, EmbeddingMode::Greedy, &warnings) - expected / scored) < 1e-9);
  CHECK_FALSE(warnings.empty());

  const std::vector<Tokens> a{{"t0", "t3", "t1"}}, b{{"t1", "t0", "t3"}}, ref{{"t2", "t4"}};
  for (auto m : {EmbeddingMode::Average, EmbeddingMode::Greedy})
    CHECK(std::abs(embedding_metric(a, ref, table, m) - embedding_metric(b, ref, table, m)) < 1e-12);
}

TEST_CASE("word vector files") {
  std::istringstream in("2 3\nfoo 1 2 3\nbar 0 0.5 -1\n");
  const auto t = read_vectors(in);
  CHECK(t.dim() == 3);
  CHECK(t.size() == 2);
  CHECK(t.lookup("bar")[2] == -1.0f);
  CHECK(t.lookup("none") == std::vector<float>{0, 0, 0});
  std::istringstream bad("foo 1 2\nbar 1\n");
  CHECK_THROWS_AS(read_vectors(bad), ParseError);
}

TEST_CASE("perplexity") {
  const auto vocab = word_vocab(10);
  const std::vector<DialogueExample> examples{{"a", {"t1", "t2", "[TURN]", "t3"}, {"t4", "t5"}, Language::En},
                                              {"b", {"t6"}, {"t7", "t8", "t9"}, Language::En}};
  Seq2Seq model(tiny_model(vocab));

  double nll = 0;
  int count = 0;
  for (const auto& ex : examples) {
    const auto enc = model.encode(encode_history(ex, vocab, model.config()));
    const auto tf = teacher_forcing(ex.response, ex.language, vocab, model.config());
    const auto dist = model.decode_distribution(enc, tf.input);
    for (std::size_t i = 0; i < tf.target.size(); ++i) {
      nll -= std::log(static_cast<double>(dist.probs(static_cast<int>(i), tf.target[i])));
      ++count;
    }
  }
  CHECK(perplexity(model, vocab, examples) == doctest::Approx(std::exp(nll / count)).epsilon(1e-5));

  model.embeddings().value.zero();
  model.parameter("output_bias").value.zero();
  CHECK(perplexity(model, vocab, examples) == doctest::Approx(vocab.size()).epsilon(1e-6));
  CHECK_THROWS_AS(perplexity(model, vocab, {}), DegenerateInputError);
}

TEST_CASE("metrics reports and percentage tables") {
  MetricsReport sup;
  sup.ppl = 40;
  sup.dist1 = 0.5;
  sup.dist2 = 0.6;
  sup.bleu1 = 0.3;
  sup.bleu2 = 0.2;
  sup.rouge_l = 0.25;
  sup.emb_average = 0.8;
  sup.emb_extrema = 0.4;
  sup.emb_greedy = 0.6;
  CHECK(MetricsReport::parse(sup.to_text()).to_json() == sup.to_json());

  const auto same = zero_sup_percentage(sup, sup);
  for (const auto& r : same.rows) CHECK(r.percent == doctest::Approx(100.0));
  CHECK(same.average == doctest::Approx(100.0));

  MetricsReport zero = sup;
  for (const auto& n : MetricsReport::names()) zero.set(n, 0.8839 * sup.get(n));
  const auto scaled = zero_sup_percentage(zero, sup);
  CHECK(scaled.average == doctest::Approx(88.39).epsilon(1e-9));

  sup.bleu2 = 0;
  const auto guarded = zero_sup_percentage(zero, sup);
  int undefined = 0;
  for (const auto& r : guarded.rows) undefined += !r.defined;
  CHECK(undefined == 1);
  CHECK(guarded.average == doctest::Approx(88.39).epsilon(1e-9));
  CHECK(guarded.to_text().find("AVE") != std::string::npos);
}
