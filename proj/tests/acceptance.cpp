// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "chatzero/cli.hpp"
#include "chatzero/generator.hpp"
#include "chatzero/metrics.hpp"
#include "chatzero/objective.hpp"
#include "chatzero/switcher.hpp"
#include "chatzero/synthetic.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace chatzero;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

// Tolerances and budgets.
constexpr double kSwitchRate = 0.6;
constexpr double kSwitchTol = 0.03;
constexpr std::size_t kMinCoveredPositions = 10000;
constexpr double kSwitchSeconds = 10.0;
constexpr int kViewExamples = 1000;
constexpr double kIdentityTol = 1e-6;
constexpr double kGumbelGradTol = 1e-3;
constexpr double kReprGradTol = 1e-4;
constexpr double kMetricTol = 1e-9;
constexpr int kMetricPairs = 100;
constexpr double kPplRelTol = 1e-12;
constexpr int kEndToEndPairs = 2000;
constexpr int kEndToEndEpochs = 240;
constexpr int kSmoothingBlocks = 10;
constexpr double kEndToEndSeconds = 1800.0;
constexpr double kBleuFactor = 2.0;
constexpr double kPlaceholderMax = 0.15;
constexpr double kPercentTol = 1e-9;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 6) {
  std::ostringstream o;
  o.precision(precision);
  o << v;
  return o.str();
}

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

int cli(const std::vector<std::string>& args, std::string* out = nullptr) {
  std::ostringstream o, e;
  const int status = dispatch(args, o, e);
  if (out) *out = o.str();
  if (status != 0) std::cerr << e.str();
  return status;
}

Outcome switch_statistics() {
  const auto start = Clock::now();
  SyntheticSpec spec;
  spec.seed = 11;
  const auto data = make_synthetic(spec);
  SwitchConfig cfg;
  cfg.k = 2;
  cfg.tau = 0.4;
  cfg.seed = 3;
  std::size_t covered = 0, replaced = 0, words = 0, hits = 0, masked = 0;
  for (const auto& ex : data.train.examples) {
    const auto views = build_views(ex, data.lexicon, cfg);
    for (int it = 0; it < cfg.k; ++it) {
      const View& pt = views.pseudo_targets[it];
      const View& cs = views.code_switches[it];
      for (const auto* side : {&ex.history, &ex.response}) {
        const bool hist = side == &ex.history;
        const auto& pt_tokens = hist ? pt.history : pt.response;
        const auto& cs_origin = hist ? cs.history_origin : cs.response_origin;
        for (std::size_t i = 0; i < side->size(); ++i) {
          const auto& tok = (*side)[i];
          if (is_special_token(tok)) continue;
          const bool hit = data.lexicon.contains(tok);
          ++words;
          hits += hit;
          masked += pt_tokens[i + 1] == cfg.placeholder;
          if (hit) {
            ++covered;
            replaced += cs_origin[i] == Origin::Replaced;
          }
        }
      }
    }
  }
  const double rate = static_cast<double>(replaced) / static_cast<double>(covered);
  const bool exact = masked == words - hits;
  const double elapsed = seconds_since(start);
  Outcome o;
  o.pass = covered >= kMinCoveredPositions && std::abs(rate - kSwitchRate) <= kSwitchTol && exact &&
           elapsed < kSwitchSeconds;
  o.detail = "replacement rate " + fmt(rate) + " over " + std::to_string(covered) + " covered positions; placeholders " +
             std::to_string(masked) + " vs misses " + std::to_string(words - hits) + "; " + fmt(elapsed, 3) + " s";
  return o;
}

bool aligned(const std::vector<std::string>& src, const View& v, const std::vector<std::string>& tokens,
             const std::vector<Origin>& origin, const BilingualLexicon& lex, const std::string& placeholder) {
  if (tokens.size() != src.size() + 1 || origin.size() != src.size()) return false;
  for (std::size_t i = 0; i < src.size(); ++i) {
    const std::string& s = src[i];
    const std::string& t = tokens[i + 1];
    const auto* cands = lex.lookup(s);
    if (is_special_token(s)) {
      if (t != s || origin[i] != Origin::Kept) return false;
      continue;
    }
    const bool translated = cands && std::find(cands->begin(), cands->end(), t) != cands->end();
    switch (v.kind) {
      case ViewKind::Source:
        if (t != s || origin[i] != Origin::Kept) return false;
        break;
      case ViewKind::PseudoTarget:
        if (cands ? !(translated && origin[i] == Origin::Replaced)
                  : !(t == placeholder && origin[i] == Origin::Masked))
          return false;
        break;
      case ViewKind::CodeSwitch:
        if (origin[i] == Origin::Replaced ? !translated : !(origin[i] == Origin::Kept && t == s)) return false;
        break;
    }
  }
  return true;
}

Outcome view_structure() {
  SyntheticSpec spec;
  spec.seed = 12;
  spec.train = kViewExamples;
  spec.valid = 1;
  spec.test = 1;
  const auto data = make_synthetic(spec);
  SwitchConfig cfg;
  cfg.k = 2;
  cfg.seed = 5;
  int good = 0;
  for (const auto& ex : data.train.examples) {
    const auto views = build_views(ex, data.lexicon, cfg);
    bool ok = views.size() == 5 && views.all().size() == 5;
    const auto all = views.all();
    const std::vector<std::pair<ViewKind, int>> expected{{ViewKind::Source, 0},       {ViewKind::PseudoTarget, 0},
                                                         {ViewKind::PseudoTarget, 1}, {ViewKind::CodeSwitch, 0},
                                                         {ViewKind::CodeSwitch, 1}};
    for (std::size_t i = 0; ok && i < all.size(); ++i) {
      const View& v = *all[i];
      const std::string tag(v.kind == ViewKind::Source         ? tag_string(ex.language)
                            : v.kind == ViewKind::PseudoTarget ? tag_string(Language::Pt)
                                                               : tag_string(Language::Cs));
      ok = v.kind == expected[i].first && v.iteration == expected[i].second && v.history.front() == tag &&
           v.response.front() == tag &&
           aligned(ex.history, v, v.history, v.history_origin, data.lexicon, cfg.placeholder) &&
           aligned(ex.response, v, v.response, v.response_origin, data.lexicon, cfg.placeholder);
    }
    ok = ok && build_views(ex, data.lexicon, cfg) == views;
    good += ok;
  }
  Outcome o;
  o.pass = good == kViewExamples;
  o.detail = std::to_string(good) + "/" + std::to_string(kViewExamples) + " examples with 5 aligned views";
  return o;
}

Outcome loss_identities() {
  double worst = 0.0;
  for (int k : {1, 2, 3}) {
    std::vector<std::vector<float>> reps(2 * k + 1, {0.3f, -1.2f, 2.0f, 0.7f});
    worst = std::max(worst, std::abs(positive_alignment(reps) - k));
  }
  LossBreakdown parts;
  parts.l_g = 1.7;
  const bool reduces = total_loss(parts, 12.5) == parts.l_g;
  LossBreakdown worked;
  worked.l_g = 1.0;
  worked.l_p_e = 2.0;
  worked.l_p_d = 3.5;
  const double value = total_loss(worked, 10.0);
  Outcome o;
  o.pass = worst <= kIdentityTol && reduces && value == 0.8625;
  o.detail = "max |alignment - k| " + fmt(worst) + "; reduction " + (reduces ? "holds" : "fails") + "; worked case " +
             fmt(value, 17);
  return o;
}

Outcome gradient_checks() {
  const int d = 8, v = 8, t = 3;
  Rng rng(21);
  auto random = [&](int r, int c) {
    Matrix m(r, c);
    for (auto& x : m.data) x = static_cast<float>(rng.normal());
    return m;
  };
  const Matrix logits = random(t, v);
  const Matrix embeddings = random(v, d);
  const Matrix noise = gumbel_noise(t, v, rng);
  const Matrix others = random(4, d);

  const double chain = gradcheck::max_relative_error(
      {logits},
      [&](ad::Tape& tape, const std::vector<ad::Var>& x) {
        const auto sampled = ad::gumbel_softmax(x[0], noise, 1.0f);
        const auto r = ad::matmul(sampled, tape.constant(embeddings));
        const auto mean = ad::mean_rows(r, {{0, 1, 2}});
        return ad_loss::positive_alignment(ad::concat_rows({mean, tape.constant(others)}));
      },
      1e-2);

  Matrix sampled(t, v);
  for (int r = 0; r < t; ++r) {
    double z = 0;
    for (int c = 0; c < v; ++c) z += sampled(r, c) = static_cast<float>(rng.uniform());
    for (int c = 0; c < v; ++c) sampled(r, c) = static_cast<float>(sampled(r, c) / z);
  }
  const Matrix u = random(1, t + 1), w = random(d, 1);
  const double repr = gradcheck::max_relative_error(
      {sampled},
      [&](ad::Tape& tape, const std::vector<ad::Var>& x) {
        const auto r = ad::matmul(x[0], tape.constant(embeddings));
        const auto both = ad::concat_rows({r, ad::mean_rows(r, {{0, 1, 2}})});
        return ad::matmul(ad::matmul(tape.constant(u), both), tape.constant(w));
      },
      1e-1);

  // The library helper must agree with the graph used above.
  const auto lib = soft_response_repr(sampled, embeddings);
  ad::Tape tape(false);
  const auto graph = ad::matmul(tape.constant(sampled), tape.constant(embeddings)).value();
  const bool same = lib.tokens.data == graph.data;

  Outcome o;
  o.pass = chain <= kGumbelGradTol && repr <= kReprGradTol && same;
  o.detail = "gumbel chain rel err " + fmt(chain, 3) + "; soft representation rel err " + fmt(repr, 3);
  return o;
}

Outcome metric_oracles() {
  Rng rng(31);
  auto sentences = [&](int n) {
    std::vector<Tokens> out(n);
    for (auto& s : out) {
      const int len = 1 + static_cast<int>(rng.index(8));
      for (int i = 0; i < len; ++i) s.push_back("w" + std::to_string(rng.index(9)));
    }
    return out;
  };
  const auto cands = sentences(kMetricPairs), refs = sentences(kMetricPairs);
  WordVectorTable table(6);
  for (int i = 0; i < 9; ++i) {
    std::vector<float> vec(6);
    for (auto& x : vec) x = static_cast<float>(rng.normal());
    table.add("w" + std::to_string(i), vec);
  }
  double worst = 0.0;
  auto track = [&](double a, double b) { worst = std::max(worst, std::abs(a - b)); };
  for (int n : {1, 2}) {
    track(bleu_n(cands, refs, n), oracle::bleu(cands, refs, n));
    track(distinct_n(cands, n), oracle::distinct(cands, n));
  }
  track(rouge_l(cands, refs), oracle::rouge_l(cands, refs));
  double greedy = 0.0;
  for (int i = 0; i < kMetricPairs; ++i) {
    std::vector<oracle::Vec> cv, rv;
    for (const auto& w : cands[i]) cv.push_back(oracle::to_double(table.lookup(w)));
    for (const auto& w : refs[i]) rv.push_back(oracle::to_double(table.lookup(w)));
    greedy += oracle::greedy_matching(cv, rv);
  }
  track(embedding_metric(cands, refs, table, EmbeddingMode::Greedy), greedy / kMetricPairs);

  Vocabulary vocab;
  for (int i = 0; i < 40; ++i) vocab.add("w" + std::to_string(i));
  ModelConfig mc;
  mc.layers = 1;
  mc.heads = 2;
  mc.hidden = 8;
  mc.ffn = 16;
  mc.vocab_size = vocab.size();
  mc.max_positions = 32;
  mc.max_decoder_positions = 16;
  Seq2Seq model(mc);
  model.embeddings().value.zero();
  model.parameter("output_bias").value.zero();
  std::vector<DialogueExample> examples;
  for (int i = 0; i < 10; ++i)
    examples.push_back({"e" + std::to_string(i), cands[i], refs[i], Language::En});
  const double ppl = perplexity(model, vocab, examples);
  const double rel = std::abs(ppl - vocab.size()) / vocab.size();

  Outcome o;
  o.pass = worst <= kMetricTol && rel <= kPplRelTol;
  o.detail = "max oracle gap " + fmt(worst, 3) + "; uniform PPL " + fmt(ppl, 15) + " for v = " +
             std::to_string(vocab.size());
  return o;
}

Outcome end_to_end(const fs::path& work) {
  const fs::path dir = work / "end_to_end";
  fs::remove_all(dir);
  SyntheticSpec spec;
  spec.seed = 1;
  spec.train = kEndToEndPairs;
  const auto data = make_synthetic(spec);
  save_synthetic(data, (dir / "data").string());
  auto in = [&](const char* name) { return (dir / "data" / name).string(); };

  const auto start = Clock::now();
  // Small transformer; switching and optimizer settings stay at their defaults.
  if (cli({"train", "--corpus", in("train.jsonl"), "--valid", in("valid.jsonl"), "--lexicon", in("lexicon.txt"),
           "--out", (dir / "run").string(), "--layers", "1", "--hidden", "32", "--heads", "2", "--ffn", "128",
           "--epochs", std::to_string(kEndToEndEpochs), "--seed", "1"}) != 0)
    return {false, "training failed"};
  const double train_seconds = seconds_since(start);

  // l_g smoothed as the mean over equal consecutive blocks of steps.
  std::vector<double> losses;
  {
    std::ifstream log(dir / "run" / "train_log.jsonl");
    for (std::string line; std::getline(log, line);) {
      const auto r = nlohmann::json::parse(line);
      if (r["type"] == "step") losses.push_back(r["l_g"].get<double>());
    }
  }
  std::vector<double> means;
  for (int b = 0; b < kSmoothingBlocks && losses.size() >= static_cast<std::size_t>(kSmoothingBlocks); ++b) {
    const std::size_t lo = losses.size() * b / kSmoothingBlocks, hi = losses.size() * (b + 1) / kSmoothingBlocks;
    means.push_back(std::accumulate(losses.begin() + lo, losses.begin() + hi, 0.0) / static_cast<double>(hi - lo));
  }
  bool monotone = means.size() >= 2;
  for (std::size_t i = 1; i < means.size(); ++i) monotone = monotone && means[i] < means[i - 1];
  if (means.empty()) return {false, "too few training steps"};

  const std::string ckpt = (dir / "run" / "checkpoints" / "best").string();
  std::string gen_out;
  if (cli({"generate", "--checkpoint", ckpt, "--corpus", in("test.jsonl"), "--train-corpus", in("train.jsonl"),
           "--lexicon", in("lexicon.txt"), "--filler", "unigram", "--out", (dir / "generations.jsonl").string()},
          &gen_out) != 0)
    return {false, "generation failed"};
  std::ifstream gen_in(dir / "generations.jsonl");
  const auto records = read_generations(gen_in);
  std::vector<Tokens> raw, filled, refs;
  for (std::size_t i = 0; i < records.size(); ++i) {
    raw.push_back(records[i].response);
    filled.push_back(records[i].filled);
    refs.push_back(data.test.examples[i].response);
  }
  const double raw_ratio = placeholder_ratio(raw);
  const double filled_ratio = placeholder_ratio(filled);
  const double bleu = bleu_n(filled, refs, 1);
  const double baseline = bleu_n(random_responses(refs, data.target_vocabulary, 17), refs, 1);
  const double total_seconds = seconds_since(start);

  Outcome o;
  o.pass = monotone && bleu >= kBleuFactor * baseline && filled_ratio < kPlaceholderMax &&
           total_seconds <= kEndToEndSeconds;
  std::ostringstream d;
  d << "block-mean l_g " << fmt(means.front(), 5) << " -> " << fmt(means.back(), 5)
    << (monotone ? " (monotone)" : " (not monotone)") << "; BLEU-1 " << fmt(bleu, 4) << " vs random " << fmt(baseline, 4)
    << "; placeholders raw " << fmt(raw_ratio, 4) << " filled " << fmt(filled_ratio, 4) << "; train "
    << fmt(train_seconds, 4) << " s, total " << fmt(total_seconds, 4) << " s";
  o.detail = d.str();
  return o;
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = slurp(e.path());
  return files;
}

Outcome determinism(const fs::path& work) {
  const fs::path dir = work / "determinism";
  fs::remove_all(dir);
  SyntheticSpec spec;
  spec.seed = 5;
  spec.train = 96;
  spec.valid = 16;
  spec.test = 16;
  const auto data = make_synthetic(spec);
  const fs::path cwd = fs::current_path();
  for (const char* run : {"a", "b"}) {
    const fs::path root = dir / run;
    save_synthetic(data, (root / "data").string());
    fs::current_path(root);
    const bool ok =
        cli({"build-corpus", "--corpus", "data/train.jsonl", "--lexicon", "data/lexicon.txt", "--k", "2", "--tau",
             "0.4", "--seed", "7", "--out", "views.jsonl"}) == 0 &&
        cli({"train", "--corpus", "data/train.jsonl", "--valid", "data/valid.jsonl", "--lexicon", "data/lexicon.txt",
             "--out", "model", "--layers", "1", "--hidden", "16", "--heads", "2", "--ffn", "32", "--batch-size", "16",
             "--learning-rate", "0.001", "--epochs", "2", "--seed", "3"}) == 0 &&
        cli({"generate", "--checkpoint", "model/checkpoints/best", "--corpus", "data/test.jsonl", "--train-corpus",
             "data/train.jsonl", "--lexicon", "data/lexicon.txt", "--beam", "4", "--out", "generations.jsonl"}) == 0;
    fs::current_path(cwd);
    if (!ok) return {false, "CLI run " + std::string(run) + " failed"};
  }
  const auto a = tree(dir / "a"), b = tree(dir / "b");
  std::vector<std::string> differing;
  for (const auto& [name, bytes] : a) {
    auto it = b.find(name);
    if (it == b.end() || it->second != bytes) differing.push_back(name);
  }
  const bool covered = a.count("views.jsonl") && a.count("model/train_log.jsonl") && a.count("generations.jsonl") &&
                       a.count("model/manifest.json") && a.count("generations.jsonl.manifest.json");
  Outcome o;
  o.pass = differing.empty() && a.size() == b.size() && covered;
  o.detail = std::to_string(a.size()) + " files compared, " + std::to_string(differing.size()) + " differ";
  if (!differing.empty()) o.detail += " (first: " + differing.front() + ")";
  return o;
}

Outcome comparison(const fs::path& work) {
  MetricsReport sup;
  sup.ppl = 37.5;
  sup.dist1 = 0.041;
  sup.dist2 = 0.213;
  sup.bleu1 = 0.382;
  sup.bleu2 = 0.291;
  sup.rouge_l = 0.35;
  sup.emb_average = 0.79;
  sup.emb_extrema = 0.52;
  sup.emb_greedy = 0.63;
  MetricsReport zero = sup;
  for (const auto& name : MetricsReport::names()) zero.set(name, 0.8839 * sup.get(name));
  const auto table = zero_sup_percentage(zero, sup);
  bool rows_ok = table.rows.size() == MetricsReport::names().size();
  for (const auto& r : table.rows) rows_ok = rows_ok && std::abs(r.percent - 88.39) <= kPercentTol;

  const fs::path dir = work / "comparison";
  fs::create_directories(dir);
  std::ofstream((dir / "zero.metrics").string()) << zero.to_text();
  std::ofstream((dir / "sup.metrics").string()) << sup.to_text();
  std::string text;
  const int status = cli({"compare", "--zero", (dir / "zero.metrics").string(), "--sup", (dir / "sup.metrics").string()},
                         &text);
  bool layout = status == 0 && text.find("Per(%)") != std::string::npos && text.find("AVE") != std::string::npos &&
                text.find("88.39") != std::string::npos;
  std::size_t last = 0;
  for (const auto& name : MetricsReport::names()) {
    const auto at = text.find("\n" + name + " ");
    layout = layout && at != std::string::npos && at >= last;
    if (at != std::string::npos) last = at;
  }
  Outcome o;
  o.pass = std::abs(table.average - 88.39) <= kPercentTol && rows_ok && layout;
  o.detail = "AVE " + fmt(table.average, 10) + "%; layout " + (layout ? "ok" : "wrong");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::string work = (fs::temp_directory_path() / "chatzero_acceptance").string();
  std::vector<int> only;
  app.add_option("--work", work, "scratch directory");
  app.add_option("--only", only, "run only these criteria");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(work);
  work = fs::absolute(work).string();

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"switch statistics", switch_statistics},
      {"view structure", view_structure},
      {"loss identities", loss_identities},
      {"gradient checks", gradient_checks},
      {"metric oracles", metric_oracles},
      {"end-to-end synthetic run", [&] { return end_to_end(work); }},
      {"CLI determinism", [&] { return determinism(work); }},
      {"comparison tooling", [&] { return comparison(work); }},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << "criterion " << id << " (" << criteria[i].first << "): " << (o.pass ? "PASS" : "FAIL") << ": "
              << o.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
