#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "chatzero/errors.hpp"
#include "chatzero/synthetic.hpp"
#include "chatzero/trainer.hpp"

using namespace chatzero;
namespace fs = std::filesystem;

namespace {

SyntheticCorpus tiny_data(int train = 50) {
  SyntheticSpec spec;
  spec.topics = 2;
  spec.words_per_topic = 8;
  spec.function_words = 6;
  spec.train = train;
  spec.valid = 10;
  spec.test = 10;
  spec.max_turns = 2;
  spec.min_sentence = 3;
  spec.max_sentence = 5;
  return make_synthetic(spec);
}

TrainConfig tiny_config(const Vocabulary& vocab) {
  TrainConfig c;
  c.batch_size = 8;
  c.learning_rate = 3e-3;
  c.seed = 7;
  c.model.layers = 1;
  c.model.heads = 2;
  c.model.hidden = 16;
  c.model.ffn = 32;
  c.model.max_positions = 64;
  c.model.max_decoder_positions = 12;
  c.model.vocab_size = vocab.size();
  return c;
}

std::vector<DialogueExample> head(const Corpus& c, std::size_t n) {
  return {c.examples.begin(), c.examples.begin() + static_cast<long>(n)};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("chatzero_test_" + name);
  fs::remove_all(p);
  return p;
}

std::vector<nlohmann::json> read_log(const std::string& path) {
  std::vector<nlohmann::json> out;
  std::ifstream in(path);
  for (std::string line; std::getline(in, line);) out.push_back(nlohmann::json::parse(line));
  return out;
}

}  // namespace

TEST_CASE("batches hold 2k+1 views per example and exclude own negatives") {
  const auto data = tiny_data();
  const auto vocab = build_vocabulary(data.train, data.lexicon);
  const auto cfg = tiny_config(vocab);

  const auto two = build_batch(head(data.train, 2), data.lexicon, cfg, vocab);
  CHECK(two.encoder_inputs.size() == 10);
  CHECK(two.rect_per_example == 3);
  CHECK(two.encoder_negatives[0].size() == 1);

  const auto examples = head(data.train, 50);
  std::vector<DialogueExample> sixty_four;
  for (int i = 0; i < 64; ++i) {
    sixty_four.push_back(examples[i % 50]);
    sixty_four.back().id += "_" + std::to_string(i);
  }
  const auto big = build_batch(sixty_four, data.lexicon, cfg, vocab);
  CHECK(big.encoder_inputs.size() == 320);
  double len = 0;
  for (int e = 0; e < big.size(); ++e) {
    CHECK(big.encoder_negatives[e].size() == 63);
    for (int row : big.encoder_negatives[e]) {
      CHECK(row % big.views_per_example == 0);
      CHECK(row / big.views_per_example != e);
    }
    for (int row : big.decoder_negatives[e]) CHECK(row / big.rect_per_example != e);
    len += static_cast<double>(sixty_four[e].response.size());
  }
  CHECK(big.t_avg == len / 64);

  CHECK_THROWS_AS(build_batch(head(data.train, 1), data.lexicon, cfg, vocab), DegenerateInputError);
  const std::vector<DialogueExample> same{data.train.examples[0], data.train.examples[0]};
  CHECK(build_batch(same, data.lexicon, cfg, vocab).size() == 2);
  CHECK(build_batch(head(data.train, 4), data.lexicon, cfg, vocab).encoder_inputs ==
        build_batch(head(data.train, 4), data.lexicon, cfg, vocab).encoder_inputs);
}

TEST_CASE("train steps are deterministic and reduce to cross-entropy at scale 0") {
  const auto data = tiny_data();
  const auto vocab = build_vocabulary(data.train, data.lexicon);
  auto cfg = tiny_config(vocab);
  const auto batch = build_batch(head(data.train, 4), data.lexicon, cfg, vocab);

  Seq2Seq a(cfg.model), b(cfg.model);
  Adam oa, ob;
  const auto la = train_step(a, oa, batch, cfg, 0);
  const auto lb = train_step(b, ob, batch, cfg, 0);
  CHECK(la.to_json() == lb.to_json());
  CHECK(la.finite());
  CHECK(la.total == doctest::Approx(la.l_g + (la.l_n_e + la.l_n_d - la.l_p_d - la.l_p_e) / (4 * batch.t_avg)));

  cfg.objective.contrastive_scale = 0.0;
  Seq2Seq c(cfg.model);
  const auto lc = compute_losses(c, batch, cfg, 0, false);
  CHECK(lc.total == lc.l_g);
}

TEST_CASE("training lowers the generation loss") {
  const auto data = tiny_data();
  const auto vocab = build_vocabulary(data.train, data.lexicon);
  auto cfg = tiny_config(vocab);
  Seq2Seq model(cfg.model);
  Adam opt;
  std::vector<Batch> batches;
  for (std::size_t i = 0; i + 8 <= 48; i += 8)
    batches.push_back(build_batch({data.train.examples.begin() + static_cast<long>(i),
                                   data.train.examples.begin() + static_cast<long>(i + 8)},
                                  data.lexicon, cfg, vocab));
  const double first = compute_losses(model, batches[0], cfg, 0, false).l_g;
  for (std::uint64_t step = 0; step < 200; ++step) train_step(model, opt, batches[step % batches.size()], cfg, step);
  CHECK(compute_losses(model, batches[0], cfg, 0, false).l_g < first);
}

TEST_CASE("adam moves against the gradient") {
  std::vector<Parameter> params{Parameter("w", 1, 2)};
  params[0].grad.data = {1.0f, -2.0f};
  Adam opt;
  opt.step(params, 0.1);
  CHECK(params[0].value.data[0] == doctest::Approx(-0.1).epsilon(1e-5));
  CHECK(params[0].value.data[1] == doctest::Approx(0.1).epsilon(1e-5));
  CHECK(params[0].grad.data == std::vector<float>{0.0f, 0.0f});
  CHECK(opt.steps() == 1);
}

TEST_CASE("train config reads keys and validates") {
  const auto c = TrainConfig::from_config(Config::parse("batch_size = 8\nk = 3\ntau = 0.5\nnormalize_negatives = true\n"));
  CHECK(c.batch_size == 8);
  CHECK(c.switching.k == 3);
  CHECK(c.switching.tau == 0.5);
  CHECK(c.objective.normalize_negatives);
  CHECK(TrainConfig{}.learning_rate == 5e-5);
  TrainConfig bad;
  bad.batch_size = 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("fit writes checkpoints and logs, and resumes") {
  const auto data = tiny_data(40);
  const auto vocab = build_vocabulary(data.train, data.lexicon);
  auto cfg = tiny_config(vocab);
  cfg.epochs = 2;
  const auto dir = scratch("fit");
  const auto result = fit(cfg, data.train, data.valid, data.lexicon, dir.string());
  CHECK(fs::exists(fs::path(result.best_checkpoint) / "state.json"));
  CHECK(fs::exists(fs::path(result.last_checkpoint) / "state.json"));
  CHECK(result.steps == 10);
  CHECK(result.best_ppl <= result.initial_ppl);
  const auto log = read_log(result.log_path);
  int steps = 0, valids = 0;
  for (const auto& r : log) {
    steps += r["type"] == "step";
    valids += r["type"] == "valid";
  }
  CHECK(steps == 10);
  CHECK(valids == 3);

  cfg.epochs = 3;
  cfg.resume = true;
  const auto resumed = fit(cfg, data.train, data.valid, data.lexicon, dir.string());
  CHECK(resumed.steps == 15);
  const auto log2 = read_log(resumed.log_path);
  std::uint64_t last_step = 0;
  for (const auto& r : log2)
    if (r["type"] == "step") {
      CHECK(r["step"].get<std::uint64_t>() == last_step + 1);
      last_step = r["step"].get<std::uint64_t>();
    }
  CHECK(last_step == 15);
  fs::remove_all(dir);
}

TEST_CASE("fresh models start from the unigram prior over decoder targets") {
  const auto data = tiny_data(20);
  const auto vocab = build_vocabulary(data.train, data.lexicon);
  auto cfg = tiny_config(vocab);
  cfg.learning_rate = 1e-12;
  cfg.max_steps = 1;
  cfg.switching.seed = cfg.seed;

  std::vector<double> counts(static_cast<std::size_t>(vocab.size()), 1.0);
  for (const auto& ex : data.train.examples)
    for (const View* v : build_views(ex, data.lexicon, cfg.switching, 0).all()) {
      for (std::size_t i = 1; i < v->response.size(); ++i) counts[vocab.id(v->response[i])] += 1.0;
      counts[Vocabulary::kSep] += 1.0;
    }
  double total = 0.0;
  for (double c : counts) total += c;

  const auto dir = scratch("prior");
  const auto with = fit(cfg, data.train, data.valid, data.lexicon, dir.string());
  const auto model = Seq2Seq::load(with.last_checkpoint);
  const auto& bias = model.parameter("output_bias").value.data;
  double worst = 0.0;
  for (std::size_t i = 0; i < counts.size(); ++i)
    worst = std::max(worst, std::abs(bias[i] - std::log(counts[i] / total)));
  CHECK(worst < 1e-5);

  cfg.unigram_bias_init = false;
  fs::remove_all(dir);
  const auto without = fit(cfg, data.train, data.valid, data.lexicon, dir.string());
  const auto plain = Seq2Seq::load(without.last_checkpoint);
  for (float b : plain.parameter("output_bias").value.data) CHECK(std::abs(b) < 1e-6f);
  CHECK(with.initial_ppl < without.initial_ppl);
  fs::remove_all(dir);
}
