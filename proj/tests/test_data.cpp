#include <doctest.h>

#include <set>
#include <sstream>

#include "chatzero/corpus.hpp"
#include "chatzero/errors.hpp"
#include "chatzero/lexicon.hpp"
#include "chatzero/switcher.hpp"
#include "chatzero/tokenizer.hpp"

using namespace chatzero;

namespace {

using Tokens = std::vector<std::string>;

BilingualLexicon lexicon_from(const std::string& text) {
  std::istringstream in(text);
  return read_lexicon(in, Language::En, Language::De);
}

}  // namespace

TEST_CASE("tokenizer splits words and punctuation") {
  TokenizerSpec spec;
  CHECK(split_words("Here is an example") == Tokens{"Here", "is", "an", "example"});
  CHECK(split_words("").empty());
  CHECK(split_words("don't") == Tokens{"don", "'", "t"});
  CHECK(split_words("ok [MASK] <De> go!") == Tokens{"ok", "[MASK]", "<De>", "go", "!"});
  CHECK(tokenize("", spec).empty());
  spec.vocabulary.add("here");
  CHECK(tokenize("here there", spec) == Tokens{"here", "[UNK]"});
}

TEST_CASE("language tags attach once") {
  CHECK(attach_language_tag({"w1", "w2"}, Language::En) == Tokens{"<En>", "w1", "w2"});
  CHECK(attach_language_tag({}, Language::De) == Tokens{"<De>"});
  CHECK(attach_language_tag({"a"}, Language::Cs).front() == "[Cs]");
  CHECK_THROWS_AS(attach_language_tag(attach_language_tag({"a"}, Language::En), Language::En), Error);
  CHECK(parse_language("de") == Language::De);
  CHECK(parse_language("<Pt>") == Language::Pt);
  CHECK_FALSE(parse_language("xx").has_value());
}

TEST_CASE("vocabulary reserves specials and round-trips ids") {
  Vocabulary v;
  CHECK(v.id("[PAD]") == Vocabulary::kPad);
  CHECK(v.id("[MASK]") == Vocabulary::kMask);
  CHECK(v.id("<De>") == Vocabulary::tag_id(Language::De));
  CHECK(v.size() == Vocabulary::special_count());
  const int a = v.add("apfel");
  CHECK(v.add("apfel") == a);
  CHECK(v.strings(v.ids({"apfel", "nope"})) == Tokens{"apfel", "[UNK]"});
  Vocabulary w;
  w.add("apfel");
  CHECK(v.fingerprint() == w.fingerprint());
  w.add("birne");
  CHECK(v.fingerprint() != w.fingerprint());
}

TEST_CASE("corpus reads JSON lines and reports bad lines") {
  std::istringstream good(
      R"({"id": "a", "history": ["hello there", "hi"], "response": "how are you", "lang": "<En>"})"
      "\n"
      R"({"id": "b", "history": ["x"], "response": "y", "lang": "<En>"})"
      "\n");
  const Corpus c = read_corpus(good, Split::Train);
  REQUIRE(c.examples.size() == 2);
  CHECK(c.examples[0].history == Tokens{"hello", "there", "[TURN]", "hi"});
  CHECK(c.examples[0].response == Tokens{"how", "are", "you"});

  std::ostringstream out;
  write_corpus(out, c);
  std::istringstream back(out.str());
  CHECK(read_corpus(back, Split::Train) == c);

  std::istringstream missing(R"({"id": "a", "history": ["x"], "response": "y", "lang": "<En>"})"
                             "\n"
                             R"({"id": "b", "history": ["x"], "lang": "<En>"})"
                             "\n");
  try {
    read_corpus(missing, Split::Train);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
  std::istringstream empty("");
  CHECK_THROWS_AS(read_corpus(empty, Split::Train), Error);
}

TEST_CASE("history joining left-truncates") {
  CHECK(join_history({"a b", "c"}, 10) == Tokens{"a", "b", "[TURN]", "c"});
  CHECK(join_history({"a b", "c d"}, 3) == Tokens{"c", "d"});
  CHECK(join_history({"a b", "c d"}, 4) == Tokens{"b", "[TURN]", "c", "d"});
}

TEST_CASE("lexicon merges candidates and rejects malformed lines") {
  const auto lex = lexicon_from("here hier\nexample beispiel\n");
  CHECK(lex.size() == 2);
  CHECK(*lex.lookup("Here") == Tokens{"hier"});
  const auto merged = lexicon_from("bank bank\nbank ufer\nbank ufer\n");
  CHECK(*merged.lookup("bank") == Tokens{"bank", "ufer"});
  CHECK(merged.lookup("zzz") == nullptr);
  try {
    lexicon_from("a b\nonly\n");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
}

TEST_CASE("coverage counts distinct filtered words") {
  Corpus c;
  c.examples.push_back({"1", {"hello", ",", "the"}, {"world", "[MASK]"}, Language::En});
  const StopWords stop{"the"};
  const auto half = coverage(lexicon_from("hello hallo\n"), c, stop);
  CHECK(half.covered == 1);
  CHECK(half.total == 2);
  CHECK(half.f == 0.5);
  CHECK(coverage(lexicon_from("hello hallo\nworld welt\n"), c, stop).f == 1.0);
  CHECK(CoverageReport::parse(half.to_text()).f == 0.5);
  Corpus only_stop;
  only_stop.examples.push_back({"1", {"the"}, {"the"}, Language::En});
  CHECK_THROWS_AS(coverage(lexicon_from("a b\n"), only_stop, stop), DegenerateInputError);
}

TEST_CASE("pseudo-target pass translates covered words and masks the rest") {
  const auto lex = lexicon_from("here hier\nan ein\n");
  Rng rng(1);
  std::vector<Origin> origins;
  CHECK(pseudo_target_pass({"here", "is", "an", "example"}, lex, rng, "[MASK]", &origins) ==
        Tokens{"hier", "[MASK]", "ein", "[MASK]"});
  CHECK(origins == std::vector<Origin>{Origin::Replaced, Origin::Masked, Origin::Replaced, Origin::Masked});
  CHECK(pseudo_target_pass({"a", "b"}, BilingualLexicon{}, rng) == Tokens{"[MASK]", "[MASK]"});
  const auto full = lexicon_from("a x\nb y\n");
  CHECK(pseudo_target_pass({"a", "b", "a"}, full, rng) == Tokens{"x", "y", "x"});
}

TEST_CASE("code-switch pass keeps uncovered words") {
  const auto lex = lexicon_from("here hier\nis ist\nan ein\nexample beispiel\n");
  Rng rng(2);
  const Tokens sentence{"Here", "is", "an", "example"};
  CHECK(code_switch_pass(sentence, lex, 1.0, rng) == sentence);
  CHECK(code_switch_pass(sentence, lex, 0.0, rng) == pseudo_target_pass(sentence, lex, rng));

  const auto partial = lexicon_from("an ein\n");
  for (int i = 0; i < 20; ++i) {
    const auto out = code_switch_pass(sentence, partial, 0.5, rng);
    CHECK(out[0] == "Here");
    CHECK(out[3] == "example");
    CHECK((out[2] == "an" || out[2] == "ein"));
  }
  // The literal variant masks uncovered words and emits every candidate when keeping.
  const auto multi = lexicon_from("an ein\nan eine\n");
  CHECK(code_switch_pass({"an", "zz"}, multi, 1.0, rng, nullptr, true) == Tokens{"ein", "eine", "[MASK]"});
}

TEST_CASE("switch rate follows tau") {
  BilingualLexicon lex(Language::En, Language::De);
  Tokens sentence;
  for (int i = 0; i < 100; ++i) {
    lex.add("w" + std::to_string(i), "t" + std::to_string(i));
    sentence.push_back("w" + std::to_string(i));
  }
  Rng rng(3);
  int replaced = 0, total = 0;
  for (int rep = 0; rep < 200; ++rep)
    for (const auto& tok : code_switch_pass(sentence, lex, 0.4, rng)) {
      replaced += tok[0] == 't';
      ++total;
    }
  CHECK(static_cast<double>(replaced) / total == doctest::Approx(0.6).epsilon(0.03));
}

TEST_CASE("view sets have 2k+1 tagged, aligned views") {
  const auto lex = lexicon_from("hello hallo\nworld welt\n");
  const DialogueExample ex{"e1", {"hello", "big", "[TURN]", "world"}, {"hello", "world", "again"}, Language::En};
  SwitchConfig cfg;
  cfg.seed = 5;
  const auto views = build_views(ex, lex, cfg);
  CHECK(views.size() == 5);
  CHECK(views.source.history.front() == "<En>");
  for (const auto& v : views.pseudo_targets) {
    CHECK(v.history.front() == "<Pt>");
    CHECK(v.history.size() == ex.history.size() + 1);
    CHECK(v.history[4] == "welt");
    CHECK(v.history[3] == "[TURN]");
    CHECK(v.response == Tokens{"<Pt>", "hallo", "welt", "[MASK]"});
  }
  for (const auto& v : views.code_switches) {
    CHECK(v.history.front() == "[Cs]");
    CHECK(v.response.size() == ex.response.size() + 1);
    CHECK(v.response[3] == "again");
  }
  CHECK(build_views(ex, lex, cfg) == views);

  cfg.k = 1;
  const auto bare = build_views(ex, BilingualLexicon{}, cfg);
  CHECK(bare.size() == 3);
  CHECK(Tokens(bare.code_switches[0].history.begin() + 1, bare.code_switches[0].history.end()) == ex.history);
  cfg.k = 0;
  CHECK_THROWS_AS(build_views(ex, lex, cfg), ConfigError);
}

TEST_CASE("views differ across examples and salts") {
  BilingualLexicon lex(Language::En, Language::De);
  Tokens words;
  for (int i = 0; i < 30; ++i) {
    lex.add("w" + std::to_string(i), "t" + std::to_string(i));
    words.push_back("w" + std::to_string(i));
  }
  SwitchConfig cfg;
  const DialogueExample a{"a", words, words, Language::En};
  DialogueExample b = a;
  b.id = "b";
  std::set<Tokens> seen;
  seen.insert(build_views(a, lex, cfg).code_switches[0].history);
  seen.insert(build_views(b, lex, cfg).code_switches[0].history);
  seen.insert(build_views(a, lex, cfg, 1).code_switches[0].history);
  CHECK(seen.size() == 3);
}
