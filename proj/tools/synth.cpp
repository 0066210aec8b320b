#include <iostream>

#include <CLI11.hpp>

#include "chatzero/errors.hpp"
#include "chatzero/synthetic.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Write a synthetic two-language dialogue corpus"};
  chatzero::SyntheticSpec spec;
  std::string out;
  app.add_option("--out", out, "output directory")->required();
  app.add_option("--seed", spec.seed, "random seed");
  app.add_option("--train", spec.train, "training pairs");
  app.add_option("--valid", spec.valid, "validation pairs");
  app.add_option("--test", spec.test, "test pairs");
  app.add_option("--topics", spec.topics, "topic count");
  app.add_option("--words-per-topic", spec.words_per_topic, "content words per topic");
  app.add_option("--coverage", spec.coverage, "share of content words in the lexicon");
  app.add_option("--chain-strength", spec.chain_strength, "probability of following the topic cycle");
  CLI11_PARSE(app, argc, argv);
  try {
    const auto data = chatzero::make_synthetic(spec);
    chatzero::save_synthetic(data, out);
    std::cout << "wrote " << data.train.examples.size() << " train, " << data.valid.examples.size() << " valid, "
              << data.test.examples.size() << " test examples and " << data.lexicon.size() << " lexicon entries to "
              << out << '\n';
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
