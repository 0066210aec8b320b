#pragma once

// Builds the mutually positive training views of a dialogue example from a
// bilingual lexicon: the source view, k pseudo-target views (every covered
// word translated, every other word replaced by a placeholder) and k
// code-switch views (covered words translated with probability 1 - tau).

#include <iosfwd>
#include <string>
#include <vector>

#include "chatzero/corpus.hpp"
#include "chatzero/lexicon.hpp"
#include "chatzero/random.hpp"

namespace chatzero {

struct SwitchConfig {
  int k = 2;
  double tau = 0.4;
  std::string placeholder = std::string(special::kMask);
  std::uint64_t seed = 0;
  // Literal pseudocode behaviour for the code-switch pass: uncovered words
  // become placeholders and the keep branch emits the whole candidate list.
  bool strict_algorithm1 = false;

  void validate() const;
};

enum class ViewKind { Source, PseudoTarget, CodeSwitch };
std::string_view view_kind_name(ViewKind kind);

enum class Origin { Kept, Replaced, Masked };

struct View {
  ViewKind kind = ViewKind::Source;
  int iteration = 0;
  std::vector<std::string> history;   // tagged
  std::vector<std::string> response;  // tagged
  std::vector<Origin> history_origin;   // untagged positions
  std::vector<Origin> response_origin;

  bool operator==(const View&) const = default;
};

struct ViewSet {
  View source;
  std::vector<View> pseudo_targets;
  std::vector<View> code_switches;

  std::size_t size() const { return 1 + pseudo_targets.size() + code_switches.size(); }
  // Source first, then pseudo-targets, then code-switches.
  std::vector<const View*> all() const;

  bool operator==(const ViewSet&) const = default;
};

std::vector<std::string> pseudo_target_pass(const std::vector<std::string>& tokens, const BilingualLexicon& lexicon,
                                            Rng& rng, const std::string& placeholder = std::string(special::kMask),
                                            std::vector<Origin>* origins = nullptr);

std::vector<std::string> code_switch_pass(const std::vector<std::string>& tokens, const BilingualLexicon& lexicon,
                                          double tau, Rng& rng, std::vector<Origin>* origins = nullptr,
                                          bool strict_algorithm1 = false,
                                          const std::string& placeholder = std::string(special::kMask));

// Deterministic in (example, lexicon, config); the random stream is seeded
// from config.seed mixed with the example id and the epoch salt.
ViewSet build_views(const DialogueExample& example, const BilingualLexicon& lexicon, const SwitchConfig& config,
                    std::uint64_t salt = 0);

// One JSON line per view: {id, view_kind, iteration, history, response, tag, lang}.
void write_views(std::ostream& out, const std::string& example_id, const ViewSet& views);

}  // namespace chatzero
