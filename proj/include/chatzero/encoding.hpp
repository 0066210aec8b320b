#pragma once

#include <optional>
#include <vector>

#include "chatzero/corpus.hpp"
#include "chatzero/model.hpp"
#include "chatzero/tokenizer.hpp"

namespace chatzero {

// How an example is turned into model inputs. Unset tags fall back to the
// example's own language.
struct TagPolicy {
  std::optional<Language> input_tag;
  std::optional<Language> decode_tag;
  // Map out-of-vocabulary history words to the placeholder instead of [UNK].
  bool unknown_as_placeholder = false;
};

// Tagged history ids, left-truncated to fit the encoder.
std::vector<int> encode_history(const std::vector<std::string>& history, Language tag, const Vocabulary& vocab,
                                const ModelConfig& config, bool unknown_as_placeholder = false);
std::vector<int> encode_history(const DialogueExample& example, const Vocabulary& vocab, const ModelConfig& config,
                                const TagPolicy& policy = {});

// Decoder input (tag + response) and targets (response + [SEP]), truncated to
// the decoder limit.
struct TeacherForcing {
  std::vector<int> input;
  std::vector<int> target;
};
TeacherForcing teacher_forcing(const std::vector<std::string>& response, Language tag, const Vocabulary& vocab,
                               const ModelConfig& config);

Language decode_tag(const DialogueExample& example, const TagPolicy& policy);

}  // namespace chatzero
