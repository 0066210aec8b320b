#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "chatzero/autograd.hpp"
#include "chatzero/matrix.hpp"
#include "chatzero/random.hpp"
#include "chatzero/tokenizer.hpp"

namespace chatzero {

struct ModelConfig {
  int layers = 4;
  int heads = 4;
  int hidden = 128;
  int ffn = 512;
  int vocab_size = 0;
  // Encoder positions include [CLS] and [SEP]; decoder positions include the
  // start tag.
  int max_positions = 514;
  int max_decoder_positions = 52;
  float temperature = 1.0f;
  bool hard_gumbel = false;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

// Encoder states for one sequence: rows are [CLS], tag, content..., [SEP].
struct EncoderOutput {
  Matrix states;
  int content_length = 0;
};

// Row i is the next-token distribution after the first i+1 prefix tokens.
struct DecoderDistribution {
  Matrix probs;
  int steps() const { return probs.rows; }
};

struct SoftResponse {
  Matrix tokens;  // t x d
  Matrix mean;    // 1 x d
};

// A padded batch of encoded sequences on some tape.
struct EncodedBatch {
  ad::Var states;            // [batch * max_len, hidden]
  std::vector<int> lengths;  // including [CLS] and [SEP]
  int max_len = 0;
  int batch() const { return static_cast<int>(lengths.size()); }
};

class Seq2Seq {
 public:
  Seq2Seq() = default;
  explicit Seq2Seq(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  Parameter& parameter(const std::string& name);
  const Parameter& parameter(const std::string& name) const;
  Parameter& embeddings() { return params_[embed_]; }
  const Parameter& embeddings() const { return params_[embed_]; }
  // Index of the tied embedding table within parameters() and a Bound.
  int embedding_index() const { return embed_; }
  std::size_t parameter_count() const;
  void zero_grad();

  // Parameters bound as leaves of one tape.
  class Bound {
   public:
    Bound(Seq2Seq& model, ad::Tape& tape);
    // Inference binding; the tape must not record.
    Bound(const Seq2Seq& model, ad::Tape& tape);
    ad::Var operator[](int index) const { return vars_[index]; }
    ad::Tape& tape() const { return *tape_; }

   private:
    ad::Tape* tape_;
    std::vector<ad::Var> vars_;
  };
  Bound bind(ad::Tape& tape) { return Bound(*this, tape); }
  Bound bind(ad::Tape& tape) const { return Bound(*this, tape); }

  // Batched graph building. Inputs are tagged id sequences; [CLS] and [SEP]
  // are added here.
  EncodedBatch encode_batch(const Bound& bound, const std::vector<std::vector<int>>& tagged) const;
  // Mean of content rows (tag, [CLS], [SEP] and padding excluded), one row per sequence.
  ad::Var pool_batch(const EncodedBatch& encoded) const;
  // Teacher-forced logits: [batch * max_dec_len, vocab]; row b*max_dec_len+i
  // predicts the token after decoder_inputs[b][i].
  ad::Var decode_batch(const Bound& bound, const EncodedBatch& encoded,
                       const std::vector<std::vector<int>>& decoder_inputs, int* max_dec_len = nullptr) const;

  // Single-sequence conveniences (no gradient).
  EncoderOutput encode(std::span<const int> tagged) const;
  DecoderDistribution decode_distribution(const EncoderOutput& encoded, std::span<const int> prefix) const;

  void save(const std::string& dir, const Vocabulary& vocab) const;
  static Seq2Seq load(const std::string& dir, Vocabulary* vocab = nullptr);

  // Copies encoder weights (and, for the decoder, the matching self-attention,
  // feed-forward and norm weights) from a masked-LM bundle. Embedding rows
  // are matched by token; language tags missing from the bundle keep their
  // fresh initialization and are reported through warnings. Cross-attention
  // stays freshly initialized.
  static Seq2Seq init_from_mlm(const std::string& bundle_dir, const Vocabulary& vocab, ModelConfig config,
                               std::vector<std::string>* warnings = nullptr);
  // Writes this model's encoder in the bundle layout read by init_from_mlm.
  void export_mlm_bundle(const std::string& dir, const Vocabulary& vocab) const;

 private:
  struct Attn {
    int wq, bq, wk, bk, wv, bv, wo, bo;
  };
  struct Norm {
    int gain, bias;
  };
  struct Ffn {
    int w1, b1, w2, b2;
  };
  struct EncoderLayer {
    Norm ln1;
    Attn attn;
    Norm ln2;
    Ffn ffn;
  };
  struct DecoderLayer {
    Norm ln1;
    Attn self;
    Norm ln2;
    Attn cross;
    Norm ln3;
    Ffn ffn;
  };

  int add_param(const std::string& name, int rows, int cols);
  Attn add_attention(const std::string& prefix);
  Norm add_norm(const std::string& prefix);
  Ffn add_ffn(const std::string& prefix);
  void initialize(Rng& rng);

  ad::Var embed(const Bound& b, const std::vector<int>& ids, int max_len, int positions) const;
  ad::Var attention_block(const Bound& b, const Attn& a, ad::Var query_in, ad::Var kv_in, std::vector<int> key_lengths,
                          int batch, int q_len, int k_len, bool causal) const;
  ad::Var ffn_block(const Bound& b, const Ffn& f, ad::Var x) const;
  ad::Var norm(const Bound& b, const Norm& n, ad::Var x) const;

  ModelConfig config_;
  std::vector<Parameter> params_;
  int embed_ = -1;
  int out_bias_ = -1;
  int enc_pos_ = -1;
  int dec_pos_ = -1;
  std::vector<EncoderLayer> encoder_;
  Norm enc_final_{};
  std::vector<DecoderLayer> decoder_;
  Norm dec_final_{};
};

// Mean of the content rows of one encoder output.
std::vector<float> pool_history(const EncoderOutput& encoded);

// Gumbel-Softmax sample of a decoder distribution: softmax((log P + g) / T).
Matrix gumbel_sample(const DecoderDistribution& distribution, float temperature, Rng& rng);
Matrix gumbel_noise(int rows, int cols, Rng& rng);

// r = P~ V and its row mean.
SoftResponse soft_response_repr(const Matrix& sampled, const Matrix& embeddings);

}  // namespace chatzero
