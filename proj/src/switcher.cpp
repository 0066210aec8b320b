#include "chatzero/switcher.hpp"

#include <iostream>
#include <json.hpp>

#include "chatzero/errors.hpp"
#include "chatzero/hashing.hpp"

namespace chatzero {

void SwitchConfig::validate() const {
  if (k < 1) throw ConfigError("switch: k must be >= 1, got " + std::to_string(k));
  if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("switch: tau must lie in [0, 1]");
  if (placeholder.empty()) throw ConfigError("switch: empty placeholder");
}

std::string_view view_kind_name(ViewKind kind) {
  switch (kind) {
    case ViewKind::Source:
      return "source";
    case ViewKind::PseudoTarget:
      return "pseudo_target";
    case ViewKind::CodeSwitch:
      return "code_switch";
  }
  return "source";
}

std::vector<const View*> ViewSet::all() const {
  std::vector<const View*> out{&source};
  for (const auto& v : pseudo_targets) out.push_back(&v);
  for (const auto& v : code_switches) out.push_back(&v);
  return out;
}

namespace {

const std::string& pick(const std::vector<std::string>& candidates, Rng& rng) {
  return candidates.size() == 1 ? candidates.front() : candidates[rng.index(candidates.size())];
}

void note(std::vector<Origin>* origins, Origin o) {
  if (origins) origins->push_back(o);
}

}  // namespace

std::vector<std::string> pseudo_target_pass(const std::vector<std::string>& tokens, const BilingualLexicon& lexicon,
                                            Rng& rng, const std::string& placeholder, std::vector<Origin>* origins) {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  if (origins) origins->clear();
  for (const auto& tok : tokens) {
    // Structural tokens ([TURN] and friends) are not words.
    if (is_special_token(tok)) {
      out.push_back(tok);
      note(origins, Origin::Kept);
    } else if (const auto* candidates = lexicon.lookup(tok)) {
      out.push_back(pick(*candidates, rng));
      note(origins, Origin::Replaced);
    } else {
      out.push_back(placeholder);
      note(origins, Origin::Masked);
    }
  }
  return out;
}

std::vector<std::string> code_switch_pass(const std::vector<std::string>& tokens, const BilingualLexicon& lexicon,
                                          double tau, Rng& rng, std::vector<Origin>* origins, bool strict_algorithm1,
                                          const std::string& placeholder) {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  if (origins) origins->clear();
  for (const auto& tok : tokens) {
    if (is_special_token(tok)) {
      out.push_back(tok);
      note(origins, Origin::Kept);
      continue;
    }
    const auto* candidates = lexicon.lookup(tok);
    if (candidates == nullptr) {
      out.push_back(strict_algorithm1 ? placeholder : tok);
      note(origins, strict_algorithm1 ? Origin::Masked : Origin::Kept);
    } else if (rng.uniform() > tau) {
      out.push_back(pick(*candidates, rng));
      note(origins, Origin::Replaced);
    } else if (strict_algorithm1) {
      for (const auto& c : *candidates) {
        out.push_back(c);
        note(origins, Origin::Replaced);
      }
    } else {
      out.push_back(tok);
      note(origins, Origin::Kept);
    }
  }
  return out;
}

ViewSet build_views(const DialogueExample& example, const BilingualLexicon& lexicon, const SwitchConfig& config,
                    std::uint64_t salt) {
  config.validate();
  Rng rng(config.seed ^ stable_hash(example.id) ^ (salt * 0x9E3779B97F4A7C15ULL));

  ViewSet set;
  set.source.kind = ViewKind::Source;
  set.source.history = attach_language_tag(example.history, example.language);
  set.source.response = attach_language_tag(example.response, example.language);
  set.source.history_origin.assign(example.history.size(), Origin::Kept);
  set.source.response_origin.assign(example.response.size(), Origin::Kept);

  for (int it = 0; it < config.k; ++it) {
    View pt;
    pt.kind = ViewKind::PseudoTarget;
    pt.iteration = it;
    pt.history = attach_language_tag(
        pseudo_target_pass(example.history, lexicon, rng, config.placeholder, &pt.history_origin), Language::Pt);
    pt.response = attach_language_tag(
        pseudo_target_pass(example.response, lexicon, rng, config.placeholder, &pt.response_origin), Language::Pt);
    set.pseudo_targets.push_back(std::move(pt));

    View cs;
    cs.kind = ViewKind::CodeSwitch;
    cs.iteration = it;
    cs.history = attach_language_tag(code_switch_pass(example.history, lexicon, config.tau, rng, &cs.history_origin,
                                                      config.strict_algorithm1, config.placeholder),
                                     Language::Cs);
    cs.response = attach_language_tag(code_switch_pass(example.response, lexicon, config.tau, rng,
                                                       &cs.response_origin, config.strict_algorithm1,
                                                       config.placeholder),
                                      Language::Cs);
    set.code_switches.push_back(std::move(cs));
  }
  return set;
}

void write_views(std::ostream& out, const std::string& example_id, const ViewSet& views) {
  using nlohmann::json;
  auto turns_of = [](const std::vector<std::string>& tagged) {
    json turns = json::array();
    std::vector<std::string> turn;
    for (std::size_t i = 1; i < tagged.size(); ++i) {
      if (tagged[i] == special::kTurn) {
        turns.push_back(detokenize(turn));
        turn.clear();
      } else {
        turn.push_back(tagged[i]);
      }
    }
    turns.push_back(detokenize(turn));
    return turns;
  };
  for (const View* v : views.all()) {
    const std::string tag = v->history.front();
    std::vector<std::string> body(v->response.begin() + 1, v->response.end());
    json record = {{"id", example_id + "#" + std::string(view_kind_name(v->kind)) + "-" + std::to_string(v->iteration)},
                   {"source_id", example_id},
                   {"view_kind", std::string(view_kind_name(v->kind))},
                   {"iteration", v->iteration},
                   {"history", turns_of(v->history)},
                   {"response", detokenize(body)},
                   {"tag", tag},
                   {"lang", tag}};
    out << record.dump() << '\n';
  }
}

}  // namespace chatzero
