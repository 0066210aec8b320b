#include "chatzero/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <ostream>
#include <set>

#include "chatzero/encoding.hpp"
#include "chatzero/errors.hpp"
#include "chatzero/hashing.hpp"
#include "chatzero/metrics.hpp"
#include "chatzero/npy.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace chatzero {

void TrainConfig::validate() const {
  if (batch_size < 2) throw ConfigError("batch_size must be at least 2 (in-batch negatives need another example)");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
    throw ConfigError("Adam betas must lie in [0, 1)");
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
  if (clip_norm < 0.0) throw ConfigError("clip_norm must be non-negative");
  if (eval_batch_size < 1) throw ConfigError("eval_batch_size must be positive");
  switching.validate();
}

json TrainConfig::to_json() const {
  json j = {{"batch_size", batch_size},
            {"learning_rate", learning_rate},
            {"adam_beta1", adam_beta1},
            {"adam_beta2", adam_beta2},
            {"adam_eps", adam_eps},
            {"epochs", epochs},
            {"seed", seed},
            {"k", switching.k},
            {"tau", switching.tau},
            {"placeholder", switching.placeholder},
            {"strict_algorithm1", switching.strict_algorithm1},
            {"resample_per_epoch", resample_per_epoch},
            {"unigram_bias_init", unigram_bias_init},
            {"normalize_negatives", objective.normalize_negatives},
            {"clip_norm", clip_norm},
            {"max_steps", max_steps},
            {"eval_batch_size", eval_batch_size},
            {"mlm_bundle", mlm_bundle},
            {"model", model.to_json()}};
  j["contrastive_scale"] = objective.contrastive_scale ? json(*objective.contrastive_scale) : json(nullptr);
  return j;
}

TrainConfig TrainConfig::from_config(const Config& c) {
  TrainConfig t;
  t.batch_size = c.get_int("batch_size", t.batch_size);
  t.learning_rate = c.get_double("learning_rate", t.learning_rate);
  t.adam_beta1 = c.get_double("adam_beta1", t.adam_beta1);
  t.adam_beta2 = c.get_double("adam_beta2", t.adam_beta2);
  t.adam_eps = c.get_double("adam_eps", t.adam_eps);
  t.epochs = c.get_int("epochs", t.epochs);
  t.seed = static_cast<std::uint64_t>(std::stoull(c.get("seed", std::to_string(t.seed))));
  t.switching.k = c.get_int("k", t.switching.k);
  t.switching.tau = c.get_double("tau", t.switching.tau);
  t.switching.placeholder = c.get("placeholder", t.switching.placeholder);
  t.switching.strict_algorithm1 = c.get_bool("strict_algorithm1", t.switching.strict_algorithm1);
  t.switching.seed = t.seed;
  t.resample_per_epoch = c.get_bool("resample_per_epoch", t.resample_per_epoch);
  t.unigram_bias_init = c.get_bool("unigram_bias_init", t.unigram_bias_init);
  t.objective.normalize_negatives = c.get_bool("normalize_negatives", t.objective.normalize_negatives);
  if (c.has("contrastive_scale")) t.objective.contrastive_scale = c.get_double("contrastive_scale", 0.0);
  t.clip_norm = c.get_double("clip_norm", t.clip_norm);
  t.max_steps = static_cast<std::uint64_t>(c.get_int("max_steps", 0));
  t.eval_batch_size = c.get_int("eval_batch_size", t.eval_batch_size);
  t.mlm_bundle = c.get("mlm_bundle", t.mlm_bundle);
  t.resume = c.get_bool("resume", t.resume);
  ModelConfig& m = t.model;
  m.layers = c.get_int("layers", m.layers);
  m.heads = c.get_int("heads", m.heads);
  m.hidden = c.get_int("hidden", m.hidden);
  m.ffn = c.get_int("ffn", m.ffn);
  m.max_positions = c.get_int("max_positions", m.max_positions);
  m.max_decoder_positions = c.get_int("max_decoder_positions", m.max_decoder_positions);
  m.temperature = static_cast<float>(c.get_double("temperature", m.temperature));
  m.hard_gumbel = c.get_bool("hard_gumbel", m.hard_gumbel);
  m.seed = t.seed;
  return t;
}

namespace {

// Add-one smoothed log frequencies of the decoder targets of the salt-0 views.
void init_unigram_bias(Seq2Seq& model, const std::vector<DialogueExample>& examples, const BilingualLexicon& lexicon,
                       const TrainConfig& config, const Vocabulary& vocab) {
  std::vector<double> counts(static_cast<std::size_t>(vocab.size()), 1.0);
  const std::size_t room = static_cast<std::size_t>(config.model.max_decoder_positions);
  for (const auto& ex : examples) {
    const ViewSet vs = build_views(ex, lexicon, config.switching, 0);
    for (const View* v : vs.all()) {
      std::vector<int> ids = vocab.ids(v->response);
      if (ids.size() > room) ids.resize(room);
      for (std::size_t i = 1; i < ids.size(); ++i) counts[ids[i]] += 1.0;
      counts[Vocabulary::kSep] += 1.0;
    }
  }
  double total = 0.0;
  for (double c : counts) total += c;
  auto& bias = model.parameter("output_bias").value.data;
  for (std::size_t i = 0; i < counts.size(); ++i) bias[i] = static_cast<float>(std::log(counts[i] / total));
}

}  // namespace

Batch build_batch(const std::vector<const DialogueExample*>& examples, const std::vector<ViewSet>& views,
                  const Vocabulary& vocab, const ModelConfig& model) {
  if (examples.size() < 2) throw DegenerateInputError("batch needs at least two examples for in-batch negatives");
  if (views.size() != examples.size()) throw ShapeError("build_batch: one view set per example required");
  Batch b;
  const int n = static_cast<int>(examples.size());
  b.views_per_example = static_cast<int>(views.front().size());
  b.rect_per_example = static_cast<int>(views.front().code_switches.size()) + 1;
  const std::size_t dec_room = static_cast<std::size_t>(model.max_decoder_positions);
  double len_sum = 0.0;
  for (int e = 0; e < n; ++e) {
    const ViewSet& vs = views[e];
    if (static_cast<int>(vs.size()) != b.views_per_example ||
        static_cast<int>(vs.code_switches.size()) + 1 != b.rect_per_example)
      throw ShapeError("build_batch: examples differ in view count");
    b.ids.push_back(examples[e]->id);
    len_sum += static_cast<double>(examples[e]->response.size());
    for (const View* v : vs.all()) {
      const Language tag = *parse_language(v->history.front());
      const std::vector<std::string> body(v->history.begin() + 1, v->history.end());
      b.encoder_inputs.push_back(encode_history(body, tag, vocab, model));
      std::vector<int> dec = vocab.ids(v->response);
      if (dec.size() > dec_room) dec.resize(dec_room);
      std::vector<int> target(dec.begin() + 1, dec.end());
      target.push_back(Vocabulary::kSep);
      b.decoder_inputs.push_back(std::move(dec));
      b.decoder_targets.push_back(std::move(target));
    }
    b.rectification_inputs.push_back(vocab.ids(vs.source.response));
    for (const View& v : vs.code_switches) b.rectification_inputs.push_back(vocab.ids(v.response));
    b.views.push_back(vs);
  }
  for (auto& r : b.rectification_inputs)
    if (static_cast<int>(r.size()) + 2 > model.max_positions) r.resize(model.max_positions - 2);
  for (int e = 0; e < n; ++e) {
    std::vector<int> enc_neg, dec_neg;
    for (int o = 0; o < n; ++o) {
      if (o == e) continue;
      enc_neg.push_back(o * b.views_per_example);
      dec_neg.push_back(o * b.rect_per_example);
    }
    b.encoder_negatives.push_back(std::move(enc_neg));
    b.decoder_negatives.push_back(std::move(dec_neg));
  }
  b.t_avg = len_sum / static_cast<double>(n);
  return b;
}

Batch build_batch(const std::vector<DialogueExample>& examples, const BilingualLexicon& lexicon,
                  const TrainConfig& config, const Vocabulary& vocab, std::uint64_t salt) {
  std::vector<const DialogueExample*> ptrs;
  std::vector<ViewSet> views;
  for (const auto& ex : examples) {
    ptrs.push_back(&ex);
    views.push_back(build_views(ex, lexicon, config.switching, salt));
  }
  return build_batch(ptrs, views, vocab, config.model);
}

void Adam::step(std::vector<Parameter>& params, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const float b1 = static_cast<float>(beta1_), b2 = static_cast<float>(beta2_);
  const float step = static_cast<float>(lr / c1);
  const float inv_c2 = static_cast<float>(1.0 / c2);
  const float eps = static_cast<float>(eps_);
  for (auto& p : params) {
    const std::size_t n = p.value.size();
    float* w = p.value.data.data();
    float* g = p.grad.data.data();
    float* m = p.adam_m.data.data();
    float* v = p.adam_v.data.data();
#pragma omp parallel for simd schedule(static)
    for (std::size_t i = 0; i < n; ++i) {
      m[i] = b1 * m[i] + (1.0f - b1) * g[i];
      v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
      w[i] -= step * m[i] / (std::sqrt(v[i] * inv_c2) + eps);
      g[i] = 0.0f;
    }
  }
}

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

ad::Var mean_of(const std::vector<ad::Var>& terms) {
  return ad::scale(ad::sum(terms), 1.0f / static_cast<float>(terms.size()));
}

std::vector<int> range(int start, int count) {
  std::vector<int> r(count);
  std::iota(r.begin(), r.end(), start);
  return r;
}

}  // namespace

LossBreakdown compute_losses(Seq2Seq& model, const Batch& batch, const TrainConfig& config, std::uint64_t step,
                             bool backward) {
  const int n = batch.size();
  const int nv = batch.views_per_example;
  const int nr = batch.rect_per_example;

  // Gold-response encodings used as constants: no gradient reaches the encoder
  // through them.
  Matrix rect;
  {
    ad::Tape frozen(false);
    const auto bound = std::as_const(model).bind(frozen);
    rect = model.pool_batch(model.encode_batch(bound, batch.rectification_inputs)).value();
  }

  ad::Tape tape(backward);
  const auto bound = model.bind(tape);
  const EncodedBatch enc = model.encode_batch(bound, batch.encoder_inputs);
  const ad::Var pooled = model.pool_batch(enc);
  int t_max = 0;
  const ad::Var logits = model.decode_batch(bound, enc, batch.decoder_inputs, &t_max);

  std::vector<int> flat_targets(static_cast<std::size_t>(logits.rows()), -1);
  std::vector<int> valid_rows;
  std::vector<std::vector<int>> segments;
  for (int s = 0; s < n * nv; ++s) {
    std::vector<int> seg;
    for (std::size_t i = 0; i < batch.decoder_targets[s].size(); ++i) {
      const int row = s * t_max + static_cast<int>(i);
      flat_targets[row] = batch.decoder_targets[s][i];
      seg.push_back(static_cast<int>(valid_rows.size()));
      valid_rows.push_back(row);
    }
    segments.push_back(std::move(seg));
  }
  const ad::Var l_g = ad::scale(ad::nll_sum(logits, flat_targets), 1.0f / static_cast<float>(n * nv));

  const ad::Var step_logits = ad::gather_rows(logits, valid_rows);
  Rng noise_rng(config.seed ^ (step + 1) * kGolden);
  const Matrix noise = gumbel_noise(step_logits.rows(), step_logits.cols(), noise_rng);
  const ad::Var sampled =
      ad::gumbel_softmax(step_logits, noise, model.config().temperature, model.config().hard_gumbel);
  const ad::Var soft = ad::mean_rows(ad::matmul(sampled, bound[model.embedding_index()]), segments);

  const ad::Var rect_var = tape.constant(std::move(rect));
  std::vector<ad::Var> pe, ne, pd, nd;
  const bool norm_neg = config.objective.normalize_negatives;
  for (int e = 0; e < n; ++e) {
    const auto own_views = range(e * nv, nv);
    const ad::Var c = ad::gather_rows(pooled, own_views);
    pe.push_back(ad_loss::positive_alignment(c));
    ne.push_back(ad_loss::negative_contrast(c, ad::gather_rows(pooled, batch.encoder_negatives[e]), norm_neg));
    const ad::Var d =
        ad::concat_rows({ad::gather_rows(soft, own_views), ad::gather_rows(rect_var, range(e * nr, nr))});
    pd.push_back(ad_loss::positive_alignment(d));
    nd.push_back(ad_loss::negative_contrast(d, ad::gather_rows(rect_var, batch.decoder_negatives[e]), norm_neg));
  }
  const ad::Var l_p_e = mean_of(pe), l_n_e = mean_of(ne), l_p_d = mean_of(pd), l_n_d = mean_of(nd);
  const float w = static_cast<float>(contrastive_weight(batch.t_avg, config.objective));
  const ad::Var contrast = ad::sum({l_n_e, l_n_d, ad::scale(l_p_d, -1.0f), ad::scale(l_p_e, -1.0f)});
  const ad::Var total = ad::add(l_g, ad::scale(contrast, w));

  LossBreakdown out;
  out.l_p_e = l_p_e.item();
  out.l_n_e = l_n_e.item();
  out.l_p_d = l_p_d.item();
  out.l_n_d = l_n_d.item();
  out.l_g = l_g.item();
  out.total = total.item();
  const std::string bad = out.first_non_finite();
  if (!bad.empty())
    throw NonFiniteError("non-finite loss term " + bad + " at step " + std::to_string(step) + ": " +
                         out.to_json().dump());
  if (backward) tape.backward(total);
  return out;
}

LossBreakdown train_step(Seq2Seq& model, Adam& optimizer, const Batch& batch, const TrainConfig& config,
                         std::uint64_t step) {
  const LossBreakdown out = compute_losses(model, batch, config, step, true);
  if (config.clip_norm > 0.0) {
    double sq = 0.0;
    for (const auto& p : model.parameters())
      for (float g : p.grad.data) sq += static_cast<double>(g) * g;
    const double norm = std::sqrt(sq);
    if (norm > config.clip_norm) {
      const float s = static_cast<float>(config.clip_norm / norm);
      for (auto& p : model.parameters())
        for (float& g : p.grad.data) g *= s;
    }
  }
  optimizer.step(model.parameters(), config.learning_rate);
  return out;
}

Vocabulary build_vocabulary(const Corpus& train, const BilingualLexicon& lexicon) {
  std::set<std::string> words;
  for (const auto& ex : train.examples) {
    words.insert(ex.history.begin(), ex.history.end());
    words.insert(ex.response.begin(), ex.response.end());
  }
  for (const auto& key : lexicon.keys())
    for (const auto& cand : *lexicon.lookup(key)) words.insert(cand);
  Vocabulary vocab;
  for (const auto& w : words)
    if (!is_special_token(w)) vocab.add(w);
  return vocab;
}

namespace {

struct TrainState {
  std::uint64_t step = 0;
  int epoch = 0;
  double initial_ppl = 0.0;
  double best_ppl = 0.0;
};

void save_checkpoint(const fs::path& dir, const Seq2Seq& model, const Vocabulary& vocab, const TrainState& state,
                     const TrainConfig& config) {
  fs::path tmp = dir;
  tmp += ".tmp";
  fs::path old = dir;
  old += ".old";
  fs::remove_all(tmp);
  model.save(tmp.string(), vocab);
  fs::create_directories(tmp / "optimizer");
  for (const auto& p : model.parameters()) {
    save_npy((tmp / "optimizer" / (p.name + ".m.npy")).string(), p.adam_m);
    save_npy((tmp / "optimizer" / (p.name + ".v.npy")).string(), p.adam_v);
  }
  {
    std::ofstream out(tmp / "state.json");
    out << json{{"step", state.step},
                {"epoch", state.epoch},
                {"initial_ppl", state.initial_ppl},
                {"best_ppl", state.best_ppl},
                {"train_config", config.to_json()}}
               .dump(2)
        << '\n';
  }
  fs::remove_all(old);
  if (fs::exists(dir)) fs::rename(dir, old);
  fs::rename(tmp, dir);
  fs::remove_all(old);
}

TrainState load_state(const fs::path& dir, Seq2Seq& model) {
  std::ifstream in(dir / "state.json");
  if (!in) throw Error("no training state in " + dir.string());
  const json j = json::parse(in);
  for (auto& p : model.parameters()) {
    p.adam_m = load_npy((dir / "optimizer" / (p.name + ".m.npy")).string());
    p.adam_v = load_npy((dir / "optimizer" / (p.name + ".v.npy")).string());
    if (!p.adam_m.same_shape(p.value) || !p.adam_v.same_shape(p.value))
      throw CompatibilityError("optimizer state shape mismatch for " + p.name);
  }
  TrainState s;
  s.step = j.at("step").get<std::uint64_t>();
  s.epoch = j.at("epoch").get<int>();
  s.initial_ppl = j.at("initial_ppl").get<double>();
  s.best_ppl = j.at("best_ppl").get<double>();
  return s;
}

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
  return order;
}

}  // namespace

FitResult fit(const TrainConfig& config_in, const Corpus& train, const Corpus& valid, const BilingualLexicon& lexicon,
              const std::string& out_dir, std::ostream* progress) {
  TrainConfig config = config_in;
  config.validate();
  if (valid.examples.empty()) throw ConfigError("validation split is empty");
  if (train.examples.size() < 2) throw DegenerateInputError("training split needs at least two examples");

  const fs::path root(out_dir);
  const fs::path ckpt = root / "checkpoints";
  fs::create_directories(ckpt);
  FitResult result;
  result.log_path = (root / "train_log.jsonl").string();
  result.best_checkpoint = (ckpt / "best").string();
  result.last_checkpoint = (ckpt / "last").string();

  Vocabulary vocab = build_vocabulary(train, lexicon);
  config.model.vocab_size = vocab.size();
  config.model.seed = config.seed;
  config.switching.seed = config.seed;

  Seq2Seq model;
  TrainState state;
  const bool resuming = config.resume && fs::exists(ckpt / "last" / "state.json");
  PerplexityOptions ppl_opts;
  ppl_opts.batch_size = config.eval_batch_size;
  std::ofstream log;
  if (resuming) {
    Vocabulary saved;
    model = Seq2Seq::load((ckpt / "last").string(), &saved);
    if (saved.fingerprint() != vocab.fingerprint())
      throw CompatibilityError("resume: training corpus or lexicon changed since the checkpoint was written");
    state = load_state(ckpt / "last", model);
    log.open(result.log_path, std::ios::app);
  } else {
    if (config.mlm_bundle.empty()) {
      model = Seq2Seq(config.model);
      if (config.unigram_bias_init) init_unigram_bias(model, train.examples, lexicon, config, vocab);
    } else {
      std::vector<std::string> warnings;
      model = Seq2Seq::init_from_mlm(config.mlm_bundle, vocab, config.model, &warnings);
      if (progress)
        for (const auto& w : warnings) *progress << "warning: " << w << '\n';
    }
    log.open(result.log_path, std::ios::trunc);
    state.initial_ppl = perplexity(model, vocab, valid.examples, ppl_opts);
    state.best_ppl = state.initial_ppl;
    log << json{{"type", "valid"}, {"epoch", 0}, {"step", 0}, {"ppl", state.initial_ppl}}.dump() << '\n';
    save_checkpoint(ckpt / "best", model, vocab, state, config);
    save_checkpoint(ckpt / "last", model, vocab, state, config);
  }
  if (!log) throw Error("cannot write training log: " + result.log_path);

  Adam optimizer(config.adam_beta1, config.adam_beta2, config.adam_eps);
  optimizer.set_steps(state.step);

  const auto& examples = train.examples;
  std::vector<ViewSet> views;
  auto build_all = [&](std::uint64_t salt) {
    views.clear();
    views.reserve(examples.size());
    for (const auto& ex : examples) views.push_back(build_views(ex, lexicon, config.switching, salt));
  };
  if (!config.resample_per_epoch) build_all(0);

  const auto started = std::chrono::steady_clock::now();
  bool stop = config.max_steps > 0 && state.step >= config.max_steps;
  while (!stop && state.epoch < config.epochs) {
    const int epoch = state.epoch + 1;
    if (config.resample_per_epoch) build_all(static_cast<std::uint64_t>(epoch));
    Rng order_rng(config.seed ^ static_cast<std::uint64_t>(epoch) * kGolden ^ 0x5851F42D4C957F2DULL);
    const auto order = shuffled(examples.size(), order_rng);
    double epoch_lg = 0.0;
    int epoch_steps = 0;
    for (std::size_t start = 0; start + 2 <= order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      if (end - start < 2) break;
      std::vector<const DialogueExample*> ptrs;
      std::vector<ViewSet> batch_views;
      for (std::size_t i = start; i < end; ++i) {
        ptrs.push_back(&examples[order[i]]);
        batch_views.push_back(views[order[i]]);
      }
      const Batch batch = build_batch(ptrs, batch_views, vocab, config.model);
      const LossBreakdown loss = train_step(model, optimizer, batch, config, state.step);
      ++state.step;
      epoch_lg += loss.l_g;
      ++epoch_steps;
      json rec = loss.to_json();
      rec["type"] = "step";
      rec["step"] = state.step;
      rec["epoch"] = epoch;
      log << rec.dump() << '\n';
      if (config.max_steps > 0 && state.step >= config.max_steps) {
        stop = true;
        break;
      }
    }
    state.epoch = epoch;
    const double ppl = perplexity(model, vocab, valid.examples, ppl_opts);
    log << json{{"type", "valid"}, {"epoch", epoch}, {"step", state.step}, {"ppl", ppl}}.dump() << '\n';
    log.flush();
    if (ppl < state.best_ppl) {
      state.best_ppl = ppl;
      save_checkpoint(ckpt / "best", model, vocab, state, config);
    }
    save_checkpoint(ckpt / "last", model, vocab, state, config);
    if (progress) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
      *progress << "epoch " << epoch << " steps " << state.step << " l_g " << epoch_lg / std::max(epoch_steps, 1)
                << " valid_ppl " << ppl << " elapsed " << secs << "s" << std::endl;
    }
  }
  result.initial_ppl = state.initial_ppl;
  result.best_ppl = state.best_ppl;
  result.steps = state.step;
  result.epochs = state.epoch;
  return result;
}

}  // namespace chatzero
