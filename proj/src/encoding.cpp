#include "chatzero/encoding.hpp"

#include "chatzero/errors.hpp"

namespace chatzero {

std::vector<int> encode_history(const std::vector<std::string>& history, Language tag, const Vocabulary& vocab,
                                const ModelConfig& config, bool unknown_as_placeholder) {
  // [CLS], tag and [SEP] take three positions.
  const std::size_t room = static_cast<std::size_t>(std::max(config.max_positions - 3, 0));
  const std::size_t start = history.size() > room ? history.size() - room : 0;
  std::vector<int> ids;
  ids.reserve(history.size() - start + 1);
  ids.push_back(Vocabulary::tag_id(tag));
  for (std::size_t i = start; i < history.size(); ++i) {
    int id = vocab.id(history[i]);
    if (id == Vocabulary::kUnk && unknown_as_placeholder) id = Vocabulary::kMask;
    ids.push_back(id);
  }
  return ids;
}

std::vector<int> encode_history(const DialogueExample& example, const Vocabulary& vocab, const ModelConfig& config,
                                const TagPolicy& policy) {
  return encode_history(example.history, policy.input_tag.value_or(example.language), vocab, config,
                        policy.unknown_as_placeholder);
}

TeacherForcing teacher_forcing(const std::vector<std::string>& response, Language tag, const Vocabulary& vocab,
                               const ModelConfig& config) {
  const std::size_t room = static_cast<std::size_t>(std::max(config.max_decoder_positions - 1, 0));
  const std::size_t n = std::min(response.size(), room);
  TeacherForcing tf;
  tf.input.push_back(Vocabulary::tag_id(tag));
  for (std::size_t i = 0; i < n; ++i) {
    const int id = vocab.id(response[i]);
    tf.input.push_back(id);
    tf.target.push_back(id);
  }
  tf.target.push_back(Vocabulary::kSep);
  return tf;
}

Language decode_tag(const DialogueExample& example, const TagPolicy& policy) {
  return policy.decode_tag.value_or(example.language);
}

}  // namespace chatzero
