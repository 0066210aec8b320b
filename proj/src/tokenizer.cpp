#include "chatzero/tokenizer.hpp"

#include <algorithm>
#include <array>
#include <fstream>

#include "chatzero/errors.hpp"
#include "chatzero/hashing.hpp"

namespace chatzero {

namespace {

constexpr std::array<std::string_view, 9> kTags = {"<En>", "<Zh>", "<De>", "<Es>", "<Fr>",
                                                   "<It>", "<Ru>", "[Cs]", "<Pt>"};
constexpr std::array<std::string_view, 9> kCodes = {"en", "zh", "de", "es", "fr", "it", "ru", "cs", "pt"};

constexpr std::array<std::string_view, 6> kSpecials = {special::kPad, special::kUnk,  special::kCls,
                                                       special::kSep, special::kMask, special::kTurn};

// Decodes one UTF-8 code point starting at pos; advances pos. Invalid bytes
// decode as themselves.
char32_t next_code_point(std::string_view s, std::size_t& pos) {
  const auto b0 = static_cast<unsigned char>(s[pos]);
  int extra = 0;
  char32_t cp = b0;
  if (b0 >= 0xF0 && b0 < 0xF8) {
    extra = 3;
    cp = b0 & 0x07;
  } else if (b0 >= 0xE0) {
    extra = 2;
    cp = b0 & 0x0F;
  } else if (b0 >= 0xC0) {
    extra = 1;
    cp = b0 & 0x1F;
  }
  if (b0 >= 0xF8 || (extra > 0 && pos + extra >= s.size())) {
    extra = 0;
    cp = b0;
  }
  for (int i = 1; i <= extra; ++i) {
    const auto b = static_cast<unsigned char>(s[pos + i]);
    if ((b & 0xC0) != 0x80) {
      extra = 0;
      cp = b0;
      break;
    }
    cp = (cp << 6) | (b & 0x3F);
  }
  pos += 1 + extra;
  return cp;
}

bool is_space(char32_t cp) {
  if (cp == ' ' || (cp >= 0x09 && cp <= 0x0D)) return true;
  return cp == 0x85 || cp == 0xA0 || cp == 0x1680 || (cp >= 0x2000 && cp <= 0x200A) || cp == 0x2028 ||
         cp == 0x2029 || cp == 0x202F || cp == 0x205F || cp == 0x3000;
}

bool is_punct(char32_t cp) {
  if (cp < 0x80) return (cp >= 33 && cp <= 47) || (cp >= 58 && cp <= 64) || (cp >= 91 && cp <= 96) ||
                        (cp >= 123 && cp <= 126);
  return (cp >= 0x00A1 && cp <= 0x00BF && cp != 0x00AA && cp != 0x00B5 && cp != 0x00BA) ||
         (cp >= 0x2010 && cp <= 0x2027) || (cp >= 0x2030 && cp <= 0x205E) || (cp >= 0x3001 && cp <= 0x3003) ||
         (cp >= 0x3008 && cp <= 0x3011) || (cp >= 0xFF01 && cp <= 0xFF0F) || (cp >= 0xFF1A && cp <= 0xFF20);
}

std::optional<std::string_view> special_prefix(std::string_view s) {
  for (auto t : kSpecials)
    if (s.substr(0, t.size()) == t) return t;
  for (auto t : kTags)
    if (s.substr(0, t.size()) == t) return t;
  return std::nullopt;
}

std::vector<std::string> word_pieces(const std::string& word, const Vocabulary& vocab) {
  std::vector<std::string> pieces;
  std::size_t start = 0;
  while (start < word.size()) {
    std::size_t end = word.size();
    std::string found;
    while (end > start) {
      std::string piece = word.substr(start, end - start);
      if (start > 0) piece = "##" + piece;
      if (vocab.contains(piece)) {
        found = std::move(piece);
        break;
      }
      --end;
      while (end > start && (static_cast<unsigned char>(word[end]) & 0xC0) == 0x80) --end;
    }
    if (found.empty()) return {std::string(special::kUnk)};
    pieces.push_back(std::move(found));
    start = end;
  }
  return pieces;
}

}  // namespace

std::string_view tag_string(Language lang) { return kTags[static_cast<std::size_t>(lang)]; }

std::optional<Language> parse_language(std::string_view text) {
  for (std::size_t i = 0; i < kTags.size(); ++i)
    if (text == kTags[i] || to_lower(text) == kCodes[i]) return static_cast<Language>(i);
  return std::nullopt;
}

bool is_language_tag(std::string_view token) {
  return std::find(kTags.begin(), kTags.end(), token) != kTags.end();
}

bool is_special_token(std::string_view token) {
  return is_language_tag(token) || std::find(kSpecials.begin(), kSpecials.end(), token) != kSpecials.end();
}

Vocabulary::Vocabulary() {
  for (auto t : kSpecials) add(t);
  for (auto t : kTags) add(t);
}

int Vocabulary::add(std::string_view token) {
  auto it = index_.find(std::string(token));
  if (it != index_.end()) return it->second;
  const int id = static_cast<int>(tokens_.size());
  tokens_.emplace_back(token);
  index_.emplace(tokens_.back(), id);
  return id;
}

int Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const { return index_.count(std::string(token)) != 0; }

std::vector<int> Vocabulary::ids(const std::vector<std::string>& tokens) const {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

std::vector<std::string> Vocabulary::strings(const std::vector<int>& ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int i : ids) out.push_back(token(i));
  return out;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  for (const auto& t : tokens_) out << t << '\n';
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open vocabulary " + path);
  Vocabulary v;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (n <= static_cast<std::size_t>(special_count())) {
      if (line != v.tokens_[n - 1]) throw ParseError("vocabulary reserved token mismatch in " + path, n);
      continue;
    }
    if (line.empty()) throw ParseError("empty vocabulary entry in " + path, n);
    if (v.contains(line)) throw ParseError("duplicate vocabulary entry '" + line + "' in " + path, n);
    v.add(line);
  }
  return v;
}

std::string Vocabulary::fingerprint() const {
  std::string joined;
  for (const auto& t : tokens_) {
    joined += t;
    joined += '\n';
  }
  return sha256_hex(joined);
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) out.push_back(std::move(word));
    word.clear();
  };
  std::size_t pos = 0;
  while (pos < text.size()) {
    if (text[pos] == '[' || text[pos] == '<') {
      if (auto sp = special_prefix(text.substr(pos))) {
        flush();
        out.emplace_back(*sp);
        pos += sp->size();
        continue;
      }
    }
    const std::size_t start = pos;
    const char32_t cp = next_code_point(text, pos);
    if (is_space(cp)) {
      flush();
    } else if (is_punct(cp)) {
      flush();
      out.emplace_back(text.substr(start, pos - start));
    } else {
      word.append(text.substr(start, pos - start));
    }
  }
  flush();
  return out;
}

std::vector<std::string> tokenize(std::string_view text, const TokenizerSpec& spec) {
  if (split_words(text).empty()) return {};
  if (spec.vocabulary.size() <= Vocabulary::special_count())
    throw ConfigError("tokenize: vocabulary has no ordinary tokens");
  std::vector<std::string> out;
  for (auto& word : split_words(text)) {
    if (spec.vocabulary.contains(word)) {
      out.push_back(std::move(word));
    } else if (spec.mode == TokenizerMode::Subword) {
      for (auto& piece : word_pieces(word, spec.vocabulary)) out.push_back(std::move(piece));
    } else {
      out.emplace_back(special::kUnk);
    }
  }
  return out;
}

std::string detokenize(const std::vector<std::string>& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (t.rfind("##", 0) == 0 && !out.empty()) {
      out += t.substr(2);
      continue;
    }
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

std::vector<std::string> attach_language_tag(const std::vector<std::string>& tokens, Language tag) {
  if (!tokens.empty() && is_language_tag(tokens.front()))
    throw Error("sequence already carries language tag " + tokens.front());
  std::vector<std::string> out;
  out.reserve(tokens.size() + 1);
  out.emplace_back(tag_string(tag));
  out.insert(out.end(), tokens.begin(), tokens.end());
  return out;
}

std::string to_lower(std::string_view text) {
  std::string out(text);
  for (char& c : out)
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  return out;
}

bool is_punctuation(std::string_view token) {
  if (token.empty()) return false;
  std::size_t pos = 0;
  while (pos < token.size())
    if (!is_punct(next_code_point(token, pos))) return false;
  return true;
}

}  // namespace chatzero
