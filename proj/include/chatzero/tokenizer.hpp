#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace chatzero {

enum class Language { En, Zh, De, Es, Fr, It, Ru, Cs, Pt };

inline constexpr Language kAllLanguages[] = {Language::En, Language::Zh, Language::De, Language::Es, Language::Fr,
                                             Language::It, Language::Ru, Language::Cs, Language::Pt};

// "<En>", ..., "[Cs]" for code-switched text, "<Pt>" for pseudo-target text.
std::string_view tag_string(Language lang);
// Accepts the tag form ("<De>") or a bare code ("de").
std::optional<Language> parse_language(std::string_view text);
bool is_language_tag(std::string_view token);

namespace special {
inline constexpr std::string_view kPad = "[PAD]";
inline constexpr std::string_view kUnk = "[UNK]";
inline constexpr std::string_view kCls = "[CLS]";
inline constexpr std::string_view kSep = "[SEP]";
inline constexpr std::string_view kMask = "[MASK]";
// Joins dialogue turns inside a concatenated history.
inline constexpr std::string_view kTurn = "[TURN]";
}  // namespace special

bool is_special_token(std::string_view token);

// Token <-> id table. The first ids are reserved for the special tokens and
// language tags, in a fixed order, so every vocabulary agrees on them.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;
  static constexpr int kMask = 4;
  static constexpr int kTurn = 5;
  static constexpr int kFirstTag = 6;

  Vocabulary();

  int add(std::string_view token);
  int id(std::string_view token) const;  // kUnk when absent
  bool contains(std::string_view token) const;
  const std::string& token(int id) const { return tokens_.at(id); }
  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  static int tag_id(Language lang) { return kFirstTag + static_cast<int>(lang); }
  static int special_count() { return kFirstTag + static_cast<int>(std::size(kAllLanguages)); }

  std::vector<int> ids(const std::vector<std::string>& tokens) const;
  std::vector<std::string> strings(const std::vector<int>& ids) const;

  // One token per line; the reserved prefix must match.
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);
  std::string fingerprint() const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

enum class TokenizerMode { Whitespace, Subword };

struct TokenizerSpec {
  TokenizerMode mode = TokenizerMode::Whitespace;
  Vocabulary vocabulary;
};

// Splits on Unicode whitespace and emits each punctuation character as its own
// token. Special tokens and language tags stay whole.
std::vector<std::string> split_words(std::string_view text);

// Vocabulary-aware tokenization. Whitespace mode maps unknown words to [UNK];
// subword mode applies greedy longest-match word pieces ("##" continuation).
std::vector<std::string> tokenize(std::string_view text, const TokenizerSpec& spec);

std::string detokenize(const std::vector<std::string>& tokens);

// Prefixes a language tag. Throws if the sequence already starts with one.
std::vector<std::string> attach_language_tag(const std::vector<std::string>& tokens, Language tag);

std::string to_lower(std::string_view text);
bool is_punctuation(std::string_view token);

}  // namespace chatzero
