#include "chatzero/model.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <unordered_map>

#include "chatzero/errors.hpp"
#include "chatzero/npy.hpp"

namespace chatzero {

namespace fs = std::filesystem;
using nlohmann::json;

void ModelConfig::validate() const {
  if (layers < 1 || heads < 1 || hidden < 1 || ffn < 1) throw ConfigError("model: sizes must be positive");
  if (hidden % heads != 0) throw ConfigError("model: hidden size must be divisible by heads");
  if (vocab_size < Vocabulary::special_count())
    throw ConfigError("model: vocab_size " + std::to_string(vocab_size) + " smaller than the special-token block");
  if (max_positions < 3 || max_decoder_positions < 1) throw ConfigError("model: position limits too small");
  if (!(temperature > 0.0f)) throw ConfigError("model: Gumbel temperature must be positive");
}

json ModelConfig::to_json() const {
  return {{"layers", layers},
          {"heads", heads},
          {"hidden", hidden},
          {"ffn", ffn},
          {"vocab_size", vocab_size},
          {"max_positions", max_positions},
          {"max_decoder_positions", max_decoder_positions},
          {"temperature", temperature},
          {"hard_gumbel", hard_gumbel},
          {"seed", seed}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig c;
  c.layers = j.at("layers");
  c.heads = j.at("heads");
  c.hidden = j.at("hidden");
  c.ffn = j.at("ffn");
  c.vocab_size = j.at("vocab_size");
  c.max_positions = j.at("max_positions");
  c.max_decoder_positions = j.at("max_decoder_positions");
  c.temperature = j.value("temperature", 1.0f);
  c.hard_gumbel = j.value("hard_gumbel", false);
  c.seed = j.value("seed", std::uint64_t{0});
  return c;
}

int Seq2Seq::add_param(const std::string& name, int rows, int cols) {
  params_.emplace_back(name, rows, cols);
  return static_cast<int>(params_.size()) - 1;
}

Seq2Seq::Attn Seq2Seq::add_attention(const std::string& p) {
  const int d = config_.hidden;
  Attn a{};
  a.wq = add_param(p + ".wq", d, d);
  a.bq = add_param(p + ".bq", 1, d);
  a.wk = add_param(p + ".wk", d, d);
  a.bk = add_param(p + ".bk", 1, d);
  a.wv = add_param(p + ".wv", d, d);
  a.bv = add_param(p + ".bv", 1, d);
  a.wo = add_param(p + ".wo", d, d);
  a.bo = add_param(p + ".bo", 1, d);
  return a;
}

Seq2Seq::Norm Seq2Seq::add_norm(const std::string& p) {
  return {add_param(p + ".gain", 1, config_.hidden), add_param(p + ".bias", 1, config_.hidden)};
}

Seq2Seq::Ffn Seq2Seq::add_ffn(const std::string& p) {
  Ffn f{};
  f.w1 = add_param(p + ".w1", config_.hidden, config_.ffn);
  f.b1 = add_param(p + ".b1", 1, config_.ffn);
  f.w2 = add_param(p + ".w2", config_.ffn, config_.hidden);
  f.b2 = add_param(p + ".b2", 1, config_.hidden);
  return f;
}

Seq2Seq::Seq2Seq(const ModelConfig& config) : config_(config) {
  config_.validate();
  params_.reserve(16 + 16 * config_.layers + 26 * config_.layers);
  embed_ = add_param("embeddings", config_.vocab_size, config_.hidden);
  out_bias_ = add_param("output_bias", 1, config_.vocab_size);
  enc_pos_ = add_param("encoder.positions", config_.max_positions, config_.hidden);
  dec_pos_ = add_param("decoder.positions", config_.max_decoder_positions, config_.hidden);
  for (int i = 0; i < config_.layers; ++i) {
    const std::string p = "encoder.layer" + std::to_string(i);
    EncoderLayer l{};
    l.ln1 = add_norm(p + ".ln1");
    l.attn = add_attention(p + ".attn");
    l.ln2 = add_norm(p + ".ln2");
    l.ffn = add_ffn(p + ".ffn");
    encoder_.push_back(l);
  }
  enc_final_ = add_norm("encoder.final_ln");
  for (int i = 0; i < config_.layers; ++i) {
    const std::string p = "decoder.layer" + std::to_string(i);
    DecoderLayer l{};
    l.ln1 = add_norm(p + ".ln1");
    l.self = add_attention(p + ".self");
    l.ln2 = add_norm(p + ".ln2");
    l.cross = add_attention(p + ".cross");
    l.ln3 = add_norm(p + ".ln3");
    l.ffn = add_ffn(p + ".ffn");
    decoder_.push_back(l);
  }
  dec_final_ = add_norm("decoder.final_ln");
  Rng rng(config_.seed);
  initialize(rng);
}

void Seq2Seq::initialize(Rng& rng) {
  const double d = config_.hidden;
  for (auto& p : params_) {
    auto& v = p.value.data;
    const std::string& n = p.name;
    auto ends_with = [&n](std::string_view s) { return n.size() >= s.size() && n.compare(n.size() - s.size(), s.size(), s) == 0; };
    if (n == "embeddings") {
      for (float& x : v) x = static_cast<float>(rng.normal() / std::sqrt(d));
    } else if (n == "encoder.positions" || n == "decoder.positions") {
      // Sinusoidal start so positions are informative before training.
      for (int pos = 0; pos < p.value.rows; ++pos)
        for (int i = 0; i < p.value.cols; ++i) {
          const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / d);
          p.value(pos, i) = static_cast<float>(i % 2 == 0 ? std::sin(pos * freq) : std::cos(pos * freq));
        }
    } else if (ends_with(".gain")) {
      std::fill(v.begin(), v.end(), 1.0f);
    } else if (p.value.rows > 1) {
      const double sigma = std::sqrt(2.0 / (p.value.rows + p.value.cols));
      for (float& x : v) x = static_cast<float>(rng.normal() * sigma);
    } else {
      std::fill(v.begin(), v.end(), 0.0f);
    }
  }
}

Parameter& Seq2Seq::parameter(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return p;
  throw Error("no parameter named " + name);
}

const Parameter& Seq2Seq::parameter(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return p;
  throw Error("no parameter named " + name);
}

std::size_t Seq2Seq::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

void Seq2Seq::zero_grad() {
  for (auto& p : params_) p.grad.zero();
}

Seq2Seq::Bound::Bound(Seq2Seq& model, ad::Tape& tape) : tape_(&tape) {
  vars_.reserve(model.params_.size());
  for (auto& p : model.params_) vars_.push_back(tape.parameter(p));
}

Seq2Seq::Bound::Bound(const Seq2Seq& model, ad::Tape& tape) : tape_(&tape) {
  if (tape.recording()) throw Error("a const model can only be bound to a non-recording tape");
  vars_.reserve(model.params_.size());
  for (const auto& p : model.params_) vars_.push_back(tape.constant(p.value));
}

ad::Var Seq2Seq::embed(const Bound& b, const std::vector<int>& ids, int max_len, int positions) const {
  std::vector<int> pos(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) pos[i] = static_cast<int>(i % max_len);
  const ad::Var tokens = ad::scale(ad::embedding(b[embed_], ids), std::sqrt(static_cast<float>(config_.hidden)));
  return ad::add(tokens, ad::embedding(b[positions], pos));
}

ad::Var Seq2Seq::norm(const Bound& b, const Norm& n, ad::Var x) const {
  return ad::layer_norm(x, b[n.gain], b[n.bias]);
}

ad::Var Seq2Seq::attention_block(const Bound& b, const Attn& a, ad::Var query_in, ad::Var kv_in,
                                 std::vector<int> key_lengths, int batch, int q_len, int k_len, bool causal) const {
  const ad::Var q = ad::add_row(ad::matmul(query_in, b[a.wq]), b[a.bq]);
  const ad::Var k = ad::add_row(ad::matmul(kv_in, b[a.wk]), b[a.bk]);
  const ad::Var v = ad::add_row(ad::matmul(kv_in, b[a.wv]), b[a.bv]);
  kernels::AttentionShape shape{batch, q_len, k_len, config_.hidden, config_.heads, causal};
  const ad::Var ctx = ad::attention(q, k, v, std::move(key_lengths), shape);
  return ad::add_row(ad::matmul(ctx, b[a.wo]), b[a.bo]);
}

ad::Var Seq2Seq::ffn_block(const Bound& b, const Ffn& f, ad::Var x) const {
  const ad::Var h = ad::gelu(ad::add_row(ad::matmul(x, b[f.w1]), b[f.b1]));
  return ad::add_row(ad::matmul(h, b[f.w2]), b[f.b2]);
}

EncodedBatch Seq2Seq::encode_batch(const Bound& b, const std::vector<std::vector<int>>& tagged) const {
  if (tagged.empty()) throw DegenerateInputError("encode: empty batch");
  EncodedBatch out;
  for (const auto& seq : tagged) {
    const int len = static_cast<int>(seq.size()) + 2;
    if (len > config_.max_positions)
      throw LengthError("encode: " + std::to_string(seq.size()) + " tokens exceed the limit of " +
                        std::to_string(config_.max_positions - 2));
    out.lengths.push_back(len);
    out.max_len = std::max(out.max_len, len);
  }
  const int batch = static_cast<int>(tagged.size());
  std::vector<int> ids(static_cast<std::size_t>(batch) * out.max_len, Vocabulary::kPad);
  for (int s = 0; s < batch; ++s) {
    int* row = ids.data() + static_cast<std::size_t>(s) * out.max_len;
    row[0] = Vocabulary::kCls;
    for (std::size_t i = 0; i < tagged[s].size(); ++i) {
      if (tagged[s][i] < 0 || tagged[s][i] >= config_.vocab_size) throw ShapeError("encode: token id out of range");
      row[i + 1] = tagged[s][i];
    }
    row[tagged[s].size() + 1] = Vocabulary::kSep;
  }
  ad::Var x = embed(b, ids, out.max_len, enc_pos_);
  for (const auto& layer : encoder_) {
    const ad::Var h = norm(b, layer.ln1, x);
    x = ad::add(x, attention_block(b, layer.attn, h, h, out.lengths, batch, out.max_len, out.max_len, false));
    x = ad::add(x, ffn_block(b, layer.ffn, norm(b, layer.ln2, x)));
  }
  out.states = norm(b, enc_final_, x);
  return out;
}

ad::Var Seq2Seq::pool_batch(const EncodedBatch& encoded) const {
  std::vector<std::vector<int>> segments(encoded.lengths.size());
  for (std::size_t s = 0; s < encoded.lengths.size(); ++s) {
    const int base = static_cast<int>(s) * encoded.max_len;
    // Rows 0 and 1 hold [CLS] and the tag; the last valid row holds [SEP].
    for (int r = 2; r < encoded.lengths[s] - 1; ++r) segments[s].push_back(base + r);
    if (segments[s].empty()) throw DegenerateInputError("pool: sequence " + std::to_string(s) + " has no content tokens");
  }
  return ad::mean_rows(encoded.states, segments);
}

ad::Var Seq2Seq::decode_batch(const Bound& b, const EncodedBatch& encoded,
                              const std::vector<std::vector<int>>& decoder_inputs, int* max_dec_len) const {
  const int batch = static_cast<int>(decoder_inputs.size());
  if (batch != encoded.batch()) throw ShapeError("decode: decoder batch differs from encoder batch");
  int max_len = 0;
  std::vector<int> lengths;
  for (const auto& seq : decoder_inputs) {
    if (seq.empty()) throw ShapeError("decode: empty decoder input");
    if (static_cast<int>(seq.size()) > config_.max_decoder_positions)
      throw LengthError("decode: prefix of " + std::to_string(seq.size()) + " exceeds " +
                        std::to_string(config_.max_decoder_positions));
    lengths.push_back(static_cast<int>(seq.size()));
    max_len = std::max(max_len, static_cast<int>(seq.size()));
  }
  std::vector<int> ids(static_cast<std::size_t>(batch) * max_len, Vocabulary::kPad);
  for (int s = 0; s < batch; ++s)
    for (std::size_t i = 0; i < decoder_inputs[s].size(); ++i) {
      if (decoder_inputs[s][i] < 0 || decoder_inputs[s][i] >= config_.vocab_size)
        throw ShapeError("decode: token id out of range");
      ids[static_cast<std::size_t>(s) * max_len + i] = decoder_inputs[s][i];
    }
  ad::Var y = embed(b, ids, max_len, dec_pos_);
  for (const auto& layer : decoder_) {
    const ad::Var h1 = norm(b, layer.ln1, y);
    y = ad::add(y, attention_block(b, layer.self, h1, h1, lengths, batch, max_len, max_len, true));
    const ad::Var h2 = norm(b, layer.ln2, y);
    y = ad::add(y, attention_block(b, layer.cross, h2, encoded.states, encoded.lengths, batch, max_len,
                                   encoded.max_len, false));
    y = ad::add(y, ffn_block(b, layer.ffn, norm(b, layer.ln3, y)));
  }
  y = norm(b, dec_final_, y);
  if (max_dec_len) *max_dec_len = max_len;
  return ad::add_row(ad::matmul_bt(y, b[embed_]), b[out_bias_]);
}

EncoderOutput Seq2Seq::encode(std::span<const int> tagged) const {
  ad::Tape tape(false);
  Bound b(*this, tape);
  const auto enc = encode_batch(b, {std::vector<int>(tagged.begin(), tagged.end())});
  EncoderOutput out;
  out.states = enc.states.value();
  out.content_length = static_cast<int>(tagged.size()) - 1;
  return out;
}

DecoderDistribution Seq2Seq::decode_distribution(const EncoderOutput& encoded, std::span<const int> prefix) const {
  if (encoded.states.cols != config_.hidden) throw ShapeError("decode: encoder width differs from model width");
  ad::Tape tape(false);
  Bound b(*this, tape);
  EncodedBatch enc;
  enc.states = tape.constant(encoded.states);
  enc.lengths = {encoded.states.rows};
  enc.max_len = encoded.states.rows;
  std::vector<int> input(prefix.begin(), prefix.end());
  if (input.empty()) input.push_back(Vocabulary::kCls);
  const ad::Var logits = decode_batch(b, enc, {input});
  DecoderDistribution out;
  out.probs = logits.value();
  kernels::softmax_rows(out.probs.data, out.probs.rows, out.probs.cols);
  return out;
}

void Seq2Seq::save(const std::string& dir, const Vocabulary& vocab) const {
  fs::create_directories(dir);
  json names = json::array();
  for (const auto& p : params_) {
    save_npy((fs::path(dir) / (p.name + ".npy")).string(), p.value);
    names.push_back(p.name);
  }
  vocab.save((fs::path(dir) / "vocab.txt").string());
  json manifest = {{"config", config_.to_json()}, {"vocab_sha256", vocab.fingerprint()}, {"parameters", names}};
  std::ofstream out(fs::path(dir) / "manifest.json");
  out << manifest.dump(2) << '\n';
}

Seq2Seq Seq2Seq::load(const std::string& dir, Vocabulary* vocab) {
  std::ifstream in(fs::path(dir) / "manifest.json");
  if (!in) throw Error("no checkpoint manifest in " + dir);
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(dir + "/manifest.json: " + e.what());
  }
  Seq2Seq model(ModelConfig::from_json(manifest.at("config")));
  const Vocabulary v = Vocabulary::load((fs::path(dir) / "vocab.txt").string());
  if (v.fingerprint() != manifest.at("vocab_sha256").get<std::string>())
    throw CompatibilityError("checkpoint " + dir + ": vocabulary hash does not match manifest");
  if (v.size() != model.config_.vocab_size) throw CompatibilityError("checkpoint " + dir + ": vocabulary size mismatch");
  for (auto& p : model.params_) {
    Matrix m = load_npy((fs::path(dir) / (p.name + ".npy")).string());
    if (!m.same_shape(p.value)) throw CompatibilityError("checkpoint " + dir + ": shape mismatch for " + p.name);
    p.value = std::move(m);
  }
  if (vocab) *vocab = v;
  return model;
}

void Seq2Seq::export_mlm_bundle(const std::string& dir, const Vocabulary& vocab) const {
  fs::create_directories(dir);
  for (const auto& p : params_)
    if (p.name == "embeddings" || p.name.rfind("encoder.", 0) == 0)
      save_npy((fs::path(dir) / (p.name + ".npy")).string(), p.value);
  std::ofstream tokens(fs::path(dir) / "vocab.txt");
  for (const auto& t : vocab.tokens()) tokens << t << '\n';
  json manifest = {{"hidden", config_.hidden},
                   {"layers", config_.layers},
                   {"heads", config_.heads},
                   {"ffn", config_.ffn},
                   {"max_positions", config_.max_positions}};
  std::ofstream out(fs::path(dir) / "manifest.json");
  out << manifest.dump(2) << '\n';
}

Seq2Seq Seq2Seq::init_from_mlm(const std::string& bundle_dir, const Vocabulary& vocab, ModelConfig config,
                               std::vector<std::string>* warnings) {
  config.vocab_size = vocab.size();
  Seq2Seq model(config);
  if (bundle_dir.empty()) return model;
  const fs::path root(bundle_dir);
  std::ifstream in(root / "manifest.json");
  if (!in) throw Error("masked-LM bundle " + bundle_dir + " has no manifest.json");
  const json manifest = json::parse(in);
  for (const char* key : {"hidden", "layers", "heads", "ffn"}) {
    const int want = key == std::string("hidden")   ? config.hidden
                     : key == std::string("layers") ? config.layers
                     : key == std::string("heads")  ? config.heads
                                                    : config.ffn;
    if (manifest.at(key).get<int>() != want)
      throw CompatibilityError(std::string("masked-LM bundle: ") + key + " is " + manifest.at(key).dump() +
                               ", model expects " + std::to_string(want));
  }

  std::unordered_map<std::string, int> bundle_rows;
  {
    std::ifstream tokens(root / "vocab.txt");
    if (!tokens) throw Error("masked-LM bundle " + bundle_dir + " has no vocab.txt");
    std::string line;
    int row = 0;
    while (std::getline(tokens, line)) bundle_rows.emplace(line, row++);
  }
  std::vector<std::string> missing;
  for (const auto& tok : vocab.tokens())
    if (!bundle_rows.count(tok) && !is_special_token(tok)) missing.push_back(tok);
  if (!missing.empty()) {
    std::string list;
    for (std::size_t i = 0; i < missing.size() && i < 20; ++i) list += (i ? ", " : "") + missing[i];
    if (missing.size() > 20) list += ", ... (" + std::to_string(missing.size()) + " total)";
    throw CompatibilityError("masked-LM bundle lacks tokens: " + list);
  }

  const Matrix bundle_embed = load_npy((root / "embeddings.npy").string());
  if (bundle_embed.cols != config.hidden) throw CompatibilityError("masked-LM bundle: embedding width mismatch");
  Matrix& embed = model.embeddings().value;
  for (int id = 0; id < vocab.size(); ++id) {
    auto it = bundle_rows.find(vocab.token(id));
    if (it == bundle_rows.end()) {
      if (warnings) warnings->push_back("token " + vocab.token(id) + " missing from bundle; freshly initialized");
      continue;
    }
    if (it->second >= bundle_embed.rows) throw CompatibilityError("masked-LM bundle: embedding rows < vocabulary");
    std::copy_n(bundle_embed.row(it->second).begin(), config.hidden, embed.row(id).begin());
  }

  auto copy = [&](const std::string& from, const std::string& to) {
    const fs::path file = root / (from + ".npy");
    if (!fs::exists(file)) throw CompatibilityError("masked-LM bundle lacks " + from);
    Matrix m = load_npy(file.string());
    Parameter& p = model.parameter(to);
    if (to.find("positions") != std::string::npos) {
      if (m.cols != p.value.cols || m.rows < p.value.rows)
        throw CompatibilityError("masked-LM bundle: " + from + " too small for " + to);
      std::copy_n(m.data.begin(), p.value.data.size(), p.value.data.begin());
      return;
    }
    if (!m.same_shape(p.value)) throw CompatibilityError("masked-LM bundle: shape mismatch for " + from);
    p.value = std::move(m);
  };
  for (const auto& p : model.params_) {
    if (p.name.rfind("encoder.", 0) == 0) copy(p.name, p.name);
  }
  copy("encoder.positions", "decoder.positions");
  copy("encoder.final_ln.gain", "decoder.final_ln.gain");
  copy("encoder.final_ln.bias", "decoder.final_ln.bias");
  const char* attn_parts[] = {"wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo"};
  for (int i = 0; i < config.layers; ++i) {
    const std::string e = "encoder.layer" + std::to_string(i);
    const std::string d = "decoder.layer" + std::to_string(i);
    for (const char* part : attn_parts) copy(e + ".attn." + part, d + ".self." + part);
    for (const char* part : {"gain", "bias"}) {
      copy(e + ".ln1." + part, d + ".ln1." + part);
      copy(e + ".ln2." + part, d + ".ln3." + part);
    }
    for (const char* part : {"w1", "b1", "w2", "b2"}) copy(e + ".ffn." + part, d + ".ffn." + part);
  }
  return model;
}

std::vector<float> pool_history(const EncoderOutput& encoded) {
  if (encoded.content_length < 1) throw DegenerateInputError("pool_history: no content tokens");
  if (encoded.states.rows < encoded.content_length + 3) throw ShapeError("pool_history: too few encoder rows");
  std::vector<double> sum(encoded.states.cols, 0.0);
  for (int r = 2; r < 2 + encoded.content_length; ++r)
    for (int c = 0; c < encoded.states.cols; ++c) sum[c] += encoded.states(r, c);
  std::vector<float> out(encoded.states.cols);
  for (int c = 0; c < encoded.states.cols; ++c) out[c] = static_cast<float>(sum[c] / encoded.content_length);
  return out;
}

Matrix gumbel_noise(int rows, int cols, Rng& rng) {
  Matrix noise(rows, cols);
  for (float& g : noise.data) g = static_cast<float>(rng.gumbel());
  return noise;
}

Matrix gumbel_sample(const DecoderDistribution& distribution, float temperature, Rng& rng) {
  if (!(temperature > 0.0f)) throw ConfigError("gumbel_sample: temperature must be positive");
  Matrix logits = distribution.probs;
  for (float& v : logits.data) v = std::log(std::max(v, 1e-30f));
  const Matrix noise = gumbel_noise(logits.rows, logits.cols, rng);
  ad::Tape tape(false);
  return ad::gumbel_softmax(tape.constant(std::move(logits)), noise, temperature).value();
}

SoftResponse soft_response_repr(const Matrix& sampled, const Matrix& embeddings) {
  if (sampled.cols != embeddings.rows)
    throw ShapeError("soft_response_repr: " + std::to_string(sampled.cols) + " columns vs " +
                     std::to_string(embeddings.rows) + " embedding rows");
  if (sampled.rows == 0) throw DegenerateInputError("soft_response_repr: no decoded steps");
  ad::Tape tape(false);
  const ad::Var r = ad::matmul(tape.constant(sampled), tape.constant(embeddings));
  std::vector<int> all(sampled.rows);
  for (int i = 0; i < sampled.rows; ++i) all[i] = i;
  SoftResponse out;
  out.tokens = r.value();
  out.mean = ad::mean_rows(r, {all}).value();
  return out;
}

}  // namespace chatzero
