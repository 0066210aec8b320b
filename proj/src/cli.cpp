#include "chatzero/cli.hpp"

#include <cstdlib>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include "chatzero/config.hpp"
#include "chatzero/corpus.hpp"
#include "chatzero/errors.hpp"
#include "chatzero/generator.hpp"
#include "chatzero/hashing.hpp"
#include "chatzero/lexicon.hpp"
#include "chatzero/metrics.hpp"
#include "chatzero/switcher.hpp"
#include "chatzero/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace chatzero {

namespace {

// Flag name -> config key; values given on the command line override the file.
struct Flags {
  struct Entry {
    std::string name;
    std::string value;
    CLI::Option* option = nullptr;
    bool is_flag = false;
  };
  std::deque<Entry> entries;

  void text(CLI::App* app, const std::string& name, const std::string& help) {
    auto& e = entries.emplace_back(Entry{name, {}, nullptr, false});
    e.option = app->add_option("--" + name, e.value, help);
  }
  void flag(CLI::App* app, const std::string& name, const std::string& help) {
    auto& e = entries.emplace_back(Entry{name, {}, nullptr, true});
    e.option = app->add_flag("--" + name, help);
  }
  void apply(Config& config) const {
    for (const auto& e : entries)
      if (e.option->count() > 0) config.set(key_of(e.name), e.is_flag ? "true" : e.value);
  }
  static std::string key_of(std::string name) {
    for (auto& c : name)
      if (c == '-') c = '_';
    return name;
  }
};

std::string require(const Config& c, const std::string& key) {
  const std::string v = c.get(key, "");
  if (v.empty()) throw ConfigError("missing required setting --" + key);
  return v;
}

void require_file(const std::string& path, const std::string& what) {
  if (!fs::exists(path)) throw Error(what + " not found: " + path);
}

Language language_of(const Config& c, const std::string& key, Language fallback) {
  const std::string v = c.get(key, "");
  if (v.empty()) return fallback;
  const auto lang = parse_language(v);
  if (!lang) throw ConfigError("unknown language '" + v + "' for " + key);
  return *lang;
}

std::optional<Language> optional_language(const Config& c, const std::string& key, const std::string& fallback) {
  const std::string v = c.get(key, fallback);
  if (v == "auto") return std::nullopt;
  const auto lang = parse_language(v);
  if (!lang) throw ConfigError("unknown language '" + v + "' for " + key);
  return lang;
}

void write_manifest(const fs::path& path, const std::string& command, const Config& config,
                    const std::vector<std::string>& inputs) {
  json files = json::object();
  for (const auto& in : inputs) {
    if (in.empty()) continue;
    if (fs::is_directory(in)) {
      json dir = json::object();
      for (const auto& entry : fs::directory_iterator(in))
        if (entry.is_regular_file()) dir[entry.path().filename().string()] = sha256_file(entry.path().string());
      files[in] = dir;
    } else {
      files[in] = sha256_file(in);
    }
  }
  json j = {{"command", command},
            {"config", config.values()},
            {"seed", config.get("seed", "0")},
            {"inputs", files}};
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << j.dump(2) << '\n';
  if (!out) throw Error("cannot write manifest: " + path.string());
}

fs::path manifest_for(const std::string& output) {
  fs::path p(output);
  p += ".manifest.json";
  return p;
}

void validate_nonempty(const std::string& path) {
  if (!fs::exists(path) || fs::file_size(path) == 0) throw Error("output missing or empty: " + path);
}

int run_build_corpus(const Config& c, std::ostream& out) {
  const std::string corpus_path = require(c, "corpus"), lex_path = require(c, "lexicon"), out_path = require(c, "out");
  require_file(corpus_path, "corpus");
  require_file(lex_path, "lexicon");
  const Corpus corpus = load_corpus(corpus_path, Split::Train);
  const auto lex = load_lexicon(lex_path, language_of(c, "src_lang", Language::En), language_of(c, "tgt_lang", Language::De));
  SwitchConfig sw;
  sw.k = c.get_int("k", sw.k);
  sw.tau = c.get_double("tau", sw.tau);
  sw.seed = static_cast<std::uint64_t>(std::stoull(c.get("seed", "0")));
  sw.placeholder = c.get("placeholder", sw.placeholder);
  sw.strict_algorithm1 = c.get_bool("strict_algorithm1", false);
  sw.validate();
  if (fs::path(out_path).has_parent_path()) fs::create_directories(fs::path(out_path).parent_path());
  std::ofstream file(out_path);
  std::size_t views = 0;
  for (const auto& ex : corpus.examples) {
    const ViewSet vs = build_views(ex, lex, sw);
    views += vs.size();
    write_views(file, ex.id, vs);
  }
  file.close();
  if (!file) throw Error("cannot write " + out_path);
  validate_nonempty(out_path);
  write_manifest(manifest_for(out_path), "build-corpus", c, {corpus_path, lex_path});
  out << "wrote " << views << " views for " << corpus.examples.size() << " examples to " << out_path << '\n';
  return 0;
}

int run_coverage(const Config& c, std::ostream& out) {
  const std::string corpus_path = require(c, "corpus"), lex_path = require(c, "lexicon");
  require_file(corpus_path, "corpus");
  require_file(lex_path, "lexicon");
  const Corpus corpus = load_corpus(corpus_path, Split::Train);
  const auto lex = load_lexicon(lex_path, language_of(c, "src_lang", Language::En), language_of(c, "tgt_lang", Language::De));
  const std::string sw_path = c.get("stopwords", "");
  if (!sw_path.empty()) require_file(sw_path, "stop-word list");
  const StopWords stop = sw_path.empty() ? default_stopwords() : load_stopwords(sw_path);
  const CoverageReport report = coverage(lex, corpus, stop);
  out << report.to_text();
  const std::string out_path = c.get("out", "");
  if (!out_path.empty()) {
    std::ofstream file(out_path);
    file << report.to_text();
    file.close();
    if (!file) throw Error("cannot write " + out_path);
    CoverageReport::parse(report.to_text());
    write_manifest(manifest_for(out_path), "coverage", c, {corpus_path, lex_path, sw_path});
  }
  return 0;
}

int run_train(const Config& c, std::ostream& out, std::ostream& err) {
  const std::string corpus_path = require(c, "corpus"), valid_path = require(c, "valid"),
                    lex_path = require(c, "lexicon"), out_dir = require(c, "out");
  require_file(corpus_path, "training corpus");
  require_file(valid_path, "validation corpus");
  require_file(lex_path, "lexicon");
  const Corpus train = load_corpus(corpus_path, Split::Train);
  Corpus valid;
  try {
    valid = load_corpus(valid_path, Split::Valid);
  } catch (const DegenerateInputError&) {
    throw ConfigError("validation split is empty: " + valid_path);
  }
  const auto lex = load_lexicon(lex_path, language_of(c, "src_lang", Language::En), language_of(c, "tgt_lang", Language::De));
  const TrainConfig cfg = TrainConfig::from_config(c);
  cfg.validate();
  fs::create_directories(out_dir);
  write_manifest(fs::path(out_dir) / "manifest.json", "train", c, {corpus_path, valid_path, lex_path, cfg.mlm_bundle});
  const FitResult r = fit(cfg, train, valid, lex, out_dir, &err);
  validate_nonempty(r.log_path);
  Seq2Seq::load(r.best_checkpoint);
  out << "steps " << r.steps << " epochs " << r.epochs << " initial_ppl " << r.initial_ppl << " best_ppl "
      << r.best_ppl << '\n'
      << "best checkpoint " << r.best_checkpoint << '\n';
  return 0;
}

int run_generate(const Config& c, std::ostream& out) {
  const std::string ckpt = require(c, "checkpoint"), corpus_path = require(c, "corpus"), out_path = require(c, "out");
  require_file(ckpt, "checkpoint");
  require_file(corpus_path, "corpus");
  Vocabulary vocab;
  const Seq2Seq model = Seq2Seq::load(ckpt, &vocab);
  const Corpus corpus = load_corpus(corpus_path, Split::Test);
  GenerationConfig g;
  g.beam_size = c.get_int("beam", g.beam_size);
  g.max_len = c.get_int("max_len", g.max_len);
  g.min_len = c.get_int("min_len", g.min_len);
  g.length_penalty = c.get_double("length_penalty", g.length_penalty);
  g.tags.input_tag = optional_language(c, "input_tag", "<Pt>");
  g.tags.decode_tag = optional_language(c, "decode_tag", "<Pt>");
  g.tags.unknown_as_placeholder = c.get_bool("unknown_as_placeholder", true);

  const std::string filler_spec = c.get("filler", "unigram");
  std::vector<std::string> inputs{ckpt, corpus_path};
  Corpus filler_corpus;
  BilingualLexicon filler_lex;
  bool have_filler_data = false;
  if (filler_spec == "unigram") {
    const std::string train_path = require(c, "train_corpus"), lex_path = require(c, "lexicon");
    require_file(train_path, "training corpus");
    require_file(lex_path, "lexicon");
    filler_corpus = load_corpus(train_path, Split::Train);
    filler_lex = load_lexicon(lex_path, language_of(c, "src_lang", Language::En), language_of(c, "tgt_lang", Language::De));
    have_filler_data = true;
    inputs.push_back(train_path);
    inputs.push_back(lex_path);
  }
  auto filler = make_filler(filler_spec, have_filler_data ? &filler_corpus : nullptr,
                            have_filler_data ? &filler_lex : nullptr);
  std::vector<std::string> warnings;
  const auto records = generate(model, vocab, corpus.examples, g, *filler, &warnings);
  for (const auto& w : warnings) spdlog::warn("{}", w);
  if (fs::path(out_path).has_parent_path()) fs::create_directories(fs::path(out_path).parent_path());
  {
    std::ofstream file(out_path);
    write_generations(file, records);
    file.close();
    if (!file) throw Error("cannot write " + out_path);
  }
  std::ifstream check(out_path);
  if (read_generations(check).size() != records.size()) throw Error("generation output failed validation");
  write_manifest(manifest_for(out_path), "generate", c, inputs);
  std::vector<std::vector<std::string>> raw, filled;
  for (const auto& r : records) {
    raw.push_back(r.response);
    filled.push_back(r.filled);
  }
  out << "generated " << records.size() << " responses\n";
  try {
    out << "placeholder_ratio_raw " << placeholder_ratio(raw) << "\nplaceholder_ratio_filled "
        << placeholder_ratio(filled) << '\n';
  } catch (const DegenerateInputError&) {
    out << "placeholder_ratio undefined (no tokens generated)\n";
  }
  return 0;
}

int run_evaluate(const Config& c, std::ostream& out) {
  const std::string gen_path = require(c, "generations"), corpus_path = require(c, "corpus");
  require_file(gen_path, "generation file");
  require_file(corpus_path, "corpus");
  const Corpus corpus = load_corpus(corpus_path, Split::Test);
  std::ifstream gen_in(gen_path);
  const auto records = read_generations(gen_in);
  std::map<std::string, const GenerationRecord*> by_id;
  for (const auto& r : records) by_id[r.id] = &r;
  const bool use_raw = c.get("use", "filled") == "raw";
  std::vector<Tokens> cands, refs;
  for (const auto& ex : corpus.examples) {
    auto it = by_id.find(ex.id);
    if (it == by_id.end()) throw Error("no generation for example " + ex.id + " in " + gen_path);
    cands.push_back(use_raw ? it->second->response : it->second->filled);
    refs.push_back(ex.response);
  }
  std::vector<std::string> inputs{gen_path, corpus_path};
  WordVectorTable vectors;
  const std::string vec_path = c.get("vectors", "");
  if (!vec_path.empty()) {
    require_file(vec_path, "vector file");
    vectors = load_vectors(vec_path);
    inputs.push_back(vec_path);
  }
  EvaluationOptions opts;
  opts.bleu_smoothing = c.get_bool("bleu_smoothing", false);
  std::vector<std::string> warnings;
  MetricsReport report = evaluate_responses(cands, refs, vec_path.empty() ? nullptr : &vectors, opts, &warnings);
  for (const auto& w : warnings) spdlog::warn("{}", w);
  const std::string ckpt = c.get("checkpoint", "");
  if (!ckpt.empty()) {
    require_file(ckpt, "checkpoint");
    Vocabulary vocab;
    const Seq2Seq model = Seq2Seq::load(ckpt, &vocab);
    PerplexityOptions p;
    p.tags.input_tag = optional_language(c, "input_tag", "<Pt>");
    p.tags.decode_tag = optional_language(c, "decode_tag", "<Pt>");
    p.tags.unknown_as_placeholder = c.get_bool("unknown_as_placeholder", true);
    report.ppl = perplexity(model, vocab, corpus.examples, p);
    inputs.push_back(ckpt);
  }
  out << report.to_text();
  const std::string out_path = c.get("out", "");
  if (!out_path.empty()) {
    {
      std::ofstream file(out_path);
      file << report.to_text();
      file.close();
      if (!file) throw Error("cannot write " + out_path);
    }
    std::ifstream check(out_path);
    std::stringstream text;
    text << check.rdbuf();
    MetricsReport::parse(text.str());
    write_manifest(manifest_for(out_path), "evaluate", c, inputs);
  }
  return 0;
}

MetricsReport read_report(const std::string& path) {
  require_file(path, "metrics report");
  std::ifstream in(path);
  std::stringstream text;
  text << in.rdbuf();
  return MetricsReport::parse(text.str());
}

int run_compare(const Config& c, std::ostream& out) {
  const std::string zero_path = require(c, "zero"), sup_path = require(c, "sup");
  const PercentageTable table = zero_sup_percentage(read_report(zero_path), read_report(sup_path));
  for (const auto& w : table.warnings) spdlog::warn("{}", w);
  out << table.to_text();
  const std::string out_path = c.get("out", "");
  if (!out_path.empty()) {
    std::ofstream file(out_path);
    file << table.to_text();
    file.close();
    if (!file) throw Error("cannot write " + out_path);
    write_manifest(manifest_for(out_path), "compare", c, {zero_path, sup_path});
  }
  return 0;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err);
  spdlog::logger log("chatzero", sink);
  log.set_pattern("%l: %v");
  auto previous = spdlog::default_logger();
  spdlog::set_default_logger(std::make_shared<spdlog::logger>(log));
  struct Restore {
    std::shared_ptr<spdlog::logger> logger;
    ~Restore() { spdlog::set_default_logger(logger); }
  } restore{previous};

  CLI::App app{"Zero-shot cross-lingual dialogue generation"};
  app.require_subcommand(1);
  std::string config_path;
  if (const char* env = std::getenv(kConfigEnv)) config_path = env;
  app.add_option("--config", config_path, "flat key = value config file (default: $" + std::string(kConfigEnv) + ")");

  Flags flags;
  auto common = [&](CLI::App* sub) {
    flags.text(sub, "seed", "random seed");
    flags.text(sub, "out", "output path");
  };
  auto lexicon_flags = [&](CLI::App* sub) {
    flags.text(sub, "lexicon", "bilingual lexicon (source target per line)");
    flags.text(sub, "src-lang", "lexicon source language");
    flags.text(sub, "tgt-lang", "lexicon target language");
  };
  auto switch_flags = [&](CLI::App* sub) {
    flags.text(sub, "k", "views per augmentation kind");
    flags.text(sub, "tau", "code-switch keep threshold");
    flags.text(sub, "placeholder", "placeholder token");
    flags.flag(sub, "strict-algorithm1", "literal pseudocode code-switch pass");
  };
  auto tag_flags = [&](CLI::App* sub) {
    flags.text(sub, "input-tag", "history tag, or auto for the example language");
    flags.text(sub, "decode-tag", "decoder start tag, or auto");
    flags.text(sub, "unknown-as-placeholder", "map unknown history words to the placeholder (true/false)");
  };

  auto* build = app.add_subcommand("build-corpus", "write augmented training views");
  common(build);
  lexicon_flags(build);
  switch_flags(build);
  flags.text(build, "corpus", "dialogue corpus (JSON lines)");

  auto* cov = app.add_subcommand("coverage", "lexicon coverage of a corpus");
  common(cov);
  lexicon_flags(cov);
  flags.text(cov, "corpus", "dialogue corpus");
  flags.text(cov, "stopwords", "stop-word list");

  auto* train = app.add_subcommand("train", "train a model");
  common(train);
  lexicon_flags(train);
  switch_flags(train);
  flags.text(train, "corpus", "training corpus");
  flags.text(train, "valid", "validation corpus");
  for (const char* name : {"epochs", "batch-size", "learning-rate", "layers", "heads", "hidden", "ffn", "temperature",
                           "contrastive-scale", "clip-norm", "max-steps", "mlm-bundle", "eval-batch-size", "unigram-bias-init"})
    flags.text(train, name, "training setting");
  flags.flag(train, "hard-gumbel", "straight-through Gumbel-Softmax");
  flags.flag(train, "normalize-negatives", "divide negative sums by their count");
  flags.flag(train, "resample-per-epoch", "rebuild the views every epoch");
  flags.flag(train, "resume", "continue from the last checkpoint");

  auto* gen = app.add_subcommand("generate", "beam-search responses");
  common(gen);
  lexicon_flags(gen);
  tag_flags(gen);
  flags.text(gen, "checkpoint", "checkpoint directory");
  flags.text(gen, "corpus", "input corpus");
  flags.text(gen, "train-corpus", "training corpus for the unigram filler");
  flags.text(gen, "beam", "beam size");
  flags.text(gen, "max-len", "maximum response length");
  flags.text(gen, "min-len", "minimum response length");
  flags.text(gen, "length-penalty", "length normalization exponent");
  flags.text(gen, "filler", "identity, unigram or command:<program>");

  auto* eval = app.add_subcommand("evaluate", "score generations against references");
  common(eval);
  tag_flags(eval);
  flags.text(eval, "generations", "generation output file");
  flags.text(eval, "corpus", "reference corpus");
  flags.text(eval, "vectors", "word vector file");
  flags.text(eval, "checkpoint", "checkpoint for perplexity");
  flags.text(eval, "use", "filled or raw responses");
  flags.flag(eval, "bleu-smoothing", "add-one smoothing for higher-order BLEU");

  auto* cmp = app.add_subcommand("compare", "zero-shot / supervised percentage table");
  flags.text(cmp, "zero", "zero-shot metrics report");
  flags.text(cmp, "sup", "supervised metrics report");
  flags.text(cmp, "out", "output path");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, er;
    const int code = app.exit(e, o, er);
    out << o.str();
    err << er.str();
    return code;
  }

  try {
    Config config;
    if (!config_path.empty()) {
      require_file(config_path, "config file");
      config = Config::load(config_path);
    }
    flags.apply(config);
    if (build->parsed()) return run_build_corpus(config, out);
    if (cov->parsed()) return run_coverage(config, out);
    if (train->parsed()) return run_train(config, out, err);
    if (gen->parsed()) return run_generate(config, out);
    if (eval->parsed()) return run_evaluate(config, out);
    if (cmp->parsed()) return run_compare(config, out);
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 2;
}

}  // namespace chatzero
