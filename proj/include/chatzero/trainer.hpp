#pragma once

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "chatzero/config.hpp"
#include "chatzero/corpus.hpp"
#include "chatzero/lexicon.hpp"
#include "chatzero/model.hpp"
#include "chatzero/objective.hpp"
#include "chatzero/switcher.hpp"

namespace chatzero {

struct TrainConfig {
  int batch_size = 64;
  double learning_rate = 5e-5;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int epochs = 1;
  std::uint64_t seed = 0;
  SwitchConfig switching;
  ModelConfig model;
  ObjectiveConfig objective;
  bool resample_per_epoch = false;
  // Fresh models start with output_bias set to the log unigram frequencies of
  // the decoder targets.
  bool unigram_bias_init = true;
  // Global gradient-norm clip; 0 disables.
  double clip_norm = 0.0;
  // Stops training after this many optimizer steps (0: no limit). The epoch
  // in progress is closed, validated and checkpointed.
  std::uint64_t max_steps = 0;
  int eval_batch_size = 32;
  // Masked-LM bundle to initialize from; empty means random initialization.
  std::string mlm_bundle;
  bool resume = false;

  void validate() const;
  nlohmann::json to_json() const;
  // Keys not present keep their defaults.
  static TrainConfig from_config(const Config& config);
};

struct Batch {
  std::vector<std::string> ids;
  std::vector<ViewSet> views;
  int views_per_example = 0;  // 2k + 1
  int rect_per_example = 0;   // k + 1
  // Example-major: entry e * views_per_example + v.
  std::vector<std::vector<int>> encoder_inputs;
  std::vector<std::vector<int>> decoder_inputs;
  std::vector<std::vector<int>> decoder_targets;
  // Entry e * rect_per_example + j: the tagged source gold response, then the
  // k code-switch gold responses.
  std::vector<std::vector<int>> rectification_inputs;
  // Row indices into the pooled view encodings / rectification encodings.
  std::vector<std::vector<int>> encoder_negatives;
  std::vector<std::vector<int>> decoder_negatives;
  double t_avg = 0.0;

  int size() const { return static_cast<int>(ids.size()); }
};

Batch build_batch(const std::vector<const DialogueExample*>& examples, const std::vector<ViewSet>& views,
                  const Vocabulary& vocab, const ModelConfig& model);
Batch build_batch(const std::vector<DialogueExample>& examples, const BilingualLexicon& lexicon,
                  const TrainConfig& config, const Vocabulary& vocab, std::uint64_t salt = 0);

class Adam {
 public:
  Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) : beta1_(beta1), beta2_(beta2), eps_(eps) {}
  // Applies and clears the accumulated gradients.
  void step(std::vector<Parameter>& params, double lr);
  std::uint64_t steps() const { return t_; }
  void set_steps(std::uint64_t t) { t_ = t; }

 private:
  double beta1_, beta2_, eps_;
  std::uint64_t t_ = 0;
};

// Forward pass of the full objective for one batch; with backward set the
// parameter gradients are accumulated as well. The Gumbel noise is drawn
// from a stream keyed by (seed, step).
LossBreakdown compute_losses(Seq2Seq& model, const Batch& batch, const TrainConfig& config, std::uint64_t step,
                             bool backward);
LossBreakdown train_step(Seq2Seq& model, Adam& optimizer, const Batch& batch, const TrainConfig& config,
                         std::uint64_t step);

// Sorted union of the training corpus tokens and the lexicon candidates.
Vocabulary build_vocabulary(const Corpus& train, const BilingualLexicon& lexicon);

struct FitResult {
  std::string best_checkpoint;
  std::string last_checkpoint;
  std::string log_path;
  double initial_ppl = std::numeric_limits<double>::quiet_NaN();
  double best_ppl = std::numeric_limits<double>::quiet_NaN();
  std::uint64_t steps = 0;
  int epochs = 0;
};

// Writes out_dir/train_log.jsonl and out_dir/checkpoints/{best,last}.
FitResult fit(const TrainConfig& config, const Corpus& train, const Corpus& valid, const BilingualLexicon& lexicon,
              const std::string& out_dir, std::ostream* progress = nullptr);

}  // namespace chatzero
