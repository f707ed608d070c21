#include "cli.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "maskdef/defense.hpp"
#include "maskdef/embeddings.hpp"
#include "maskdef/errors.hpp"
#include "maskdef/evaluation.hpp"
#include "maskdef/graph_mlm.hpp"
#include "maskdef/mlm.hpp"

namespace maskdef::cli {
namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StatsFlags {
  std::string mode = "auto";
  std::uint64_t pairs = 10'000'000;
  std::uint64_t seed = 42;
  std::size_t exact_cap = 5000;
  bool include_diagonal = false;
};

struct DefenseFlags {
  double alpha = 2.0;
  std::size_t n = 3;
  std::size_t max_positions = 50;
  std::size_t top_k = 50;
  std::size_t min_word_length = 2;
  std::string skip_rule = "top";
};

struct Options {
  std::string embeddings;
  std::string backend;
  std::string input;
  std::string output;
  std::string trace;
  std::string format = "table";
  std::string corpus;
  std::string classifier;
  std::string encoder;
  std::string log;
  std::vector<double> alphas;
  std::size_t budget = 3;
  double floor = 0.5;
  StatsFlags stats;
  DefenseFlags defense;
};

// --- flag validation (runs before any file is touched) ----------------------

std::pair<std::string, std::string> split_spec(const std::string& spec, const char* what,
                                               std::initializer_list<const char*> kinds) {
  const auto colon = spec.find(':');
  if (colon == std::string::npos || colon + 1 == spec.size()) {
    throw UsageError(fmt::format("{} must look like <kind>:<path>", what));
  }
  std::string kind = spec.substr(0, colon);
  for (const char* k : kinds) {
    if (kind == k) return {kind, spec.substr(colon + 1)};
  }
  throw UsageError(fmt::format("unknown {} kind '{}'", what, kind));
}

DefenseConfig defense_config(const DefenseFlags& f) {
  if (!std::isfinite(f.alpha)) throw UsageError("--alpha must be a finite number");
  if (f.max_positions < 1) throw UsageError("--max-positions must be at least 1");
  if (f.top_k < 1) throw UsageError("--top-k must be at least 1");
  DefenseConfig c;
  c.alpha = f.alpha;
  c.n = f.n;
  c.max_positions = f.max_positions;
  c.top_k = f.top_k;
  c.min_word_length = f.min_word_length;
  if (f.skip_rule == "top") {
    c.skip_rule = SkipRule::kTopPrediction;
  } else if (f.skip_rule == "any") {
    c.skip_rule = SkipRule::kAnyCandidate;
  } else {
    throw UsageError("--skip-rule must be 'top' or 'any'");
  }
  return c;
}

void check_stats_flags(const StatsFlags& f) {
  if (f.mode != "auto" && f.mode != "exact" && f.mode != "sampled") {
    throw UsageError("--stats-mode must be auto, exact or sampled");
  }
  if (f.mode != "exact" && f.pairs < kMinSampledPairs) {
    throw UsageError(fmt::format("--pairs must be at least {}", kMinSampledPairs));
  }
}

void check_format(const std::string& format) {
  if (format != "table" && format != "kv") throw UsageError("--format must be 'table' or 'kv'");
}

// --- loading -----------------------------------------------------------------

std::unique_ptr<MlmBackend> load_backend(const std::string& spec) {
  auto [kind, path] = split_spec(spec, "--backend", {"table", "corpus", "onnx"});
  if (kind == "table") return std::make_unique<TableMlm>(TableMlm::from_json_file(path));
  if (kind == "corpus") return std::make_unique<CorpusMlm>(CorpusMlm::from_file(path));
  return std::make_unique<GraphMlm>(GraphMlm::from_manifest(path));
}

std::unique_ptr<Classifier> load_classifier(const std::string& spec) {
  auto [kind, path] = split_spec(spec, "--classifier", {"keywords", "onnx"});
  if (kind == "keywords") {
    return std::make_unique<KeywordClassifier>(KeywordClassifier::from_file(path));
  }
  return std::make_unique<GraphClassifier>(GraphClassifier::from_manifest(path));
}

SimilarityStats compute_stats(const EmbeddingStore& store, const StatsFlags& f) {
  StatsOptions o;
  o.pair_count = f.pairs;
  o.seed = f.seed;
  o.exact_cap = f.exact_cap;
  o.include_diagonal = f.include_diagonal;
  if (f.mode == "exact") {
    o.method = StatsMethod::kExact;
  } else if (f.mode == "sampled") {
    o.method = StatsMethod::kSampled;
  } else {
    o.method = store.size() <= f.exact_cap ? StatsMethod::kExact : StatsMethod::kSampled;
  }
  return similarity_stats(store, o);
}

std::string stats_header(const SimilarityStats& s, double alpha) {
  return fmt::format("method={} pairs={} seed={} mu={} sigma={} alpha={} threshold={}",
                     s.method == StatsMethod::kExact ? "exact" : "sampled", s.pair_count,
                     s.seed, s.mu, s.sigma, alpha, s.mu + alpha * s.sigma);
}

struct Streams {
  std::istream* in;
  std::ostream* out;
  std::ifstream in_file;
  std::ofstream out_file;
};

void open_streams(Streams& s, const Options& o, std::istream& in, std::ostream& out) {
  s.in = &in;
  s.out = &out;
  if (!o.input.empty() && o.input != "-") {
    s.in_file.open(o.input);
    if (!s.in_file) throw DataError(fmt::format("cannot open input '{}'", o.input));
    s.in = &s.in_file;
  }
  if (!o.output.empty() && o.output != "-") {
    s.out_file.open(o.output);
    if (!s.out_file) throw DataError(fmt::format("cannot open output '{}'", o.output));
    s.out = &s.out_file;
  }
}

std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

// --- subcommands -------------------------------------------------------------

int cmd_defend(const Options& o, std::istream& in, std::ostream& out, std::ostream& err) {
  const auto config = defense_config(o.defense);
  check_stats_flags(o.stats);
  split_spec(o.backend, "--backend", {"table", "corpus", "onnx"});

  const auto backend = load_backend(o.backend);
  const auto store = load_embeddings_file(o.embeddings).store;
  const auto stats = compute_stats(store, o.stats);
  err << "# " << stats_header(stats, config.alpha) << '\n';

  Streams s;
  open_streams(s, o, in, out);
  std::ofstream trace;
  if (!o.trace.empty()) {
    trace.open(o.trace);
    if (!trace) throw DataError(fmt::format("cannot open trace file '{}'", o.trace));
  }
  std::size_t line_no = 0;
  for (std::string line; std::getline(*s.in, line);) {
    ++line_no;
    const auto outcome = defend(tokenize(strip_cr(line)), *backend, store, stats, config);
    *s.out << detokenize(outcome) << '\n';
    if (trace.is_open()) {
      nlohmann::ordered_json doc;
      doc["line"] = line_no;
      doc["positions_examined"] = outcome.positions_examined;
      auto reps = nlohmann::ordered_json::array();
      for (const auto& r : outcome.replacements) {
        reps.push_back({{"position", r.position},
                        {"original", r.original},
                        {"replacement", r.replacement},
                        {"j", r.importance_rank},
                        {"k", r.candidate_rank},
                        {"similarity", r.similarity},
                        {"loss", r.loss}});
      }
      doc["replacements"] = std::move(reps);
      auto trail = nlohmann::ordered_json::array();
      for (const auto& t : outcome.trail) {
        trail.push_back({{"position", t.position},
                         {"j", t.importance_rank},
                         {"status", to_string(t.status)},
                         {"scanned", t.candidates_scanned},
                         {"not_in_vocab", t.rejected_not_in_vocab},
                         {"below_threshold", t.rejected_below_threshold}});
      }
      doc["trail"] = std::move(trail);
      trace << doc.dump() << '\n';
    }
  }
  return kExitOk;
}

int cmd_rank(const Options& o, std::istream& in, std::ostream& out, std::ostream&) {
  check_format(o.format);
  split_spec(o.backend, "--backend", {"table", "corpus", "onnx"});
  const auto backend = load_backend(o.backend);
  Streams s;
  open_streams(s, o, in, out);
  std::size_t line_no = 0;
  for (std::string line; std::getline(*s.in, line);) {
    ++line_no;
    const auto sentence = tokenize(strip_cr(line));
    const auto ranking = rank_importance(sentence, *backend);
    if (o.format == "kv") {
      nlohmann::ordered_json doc;
      doc["line"] = line_no;
      auto rows = nlohmann::ordered_json::array();
      for (const auto& e : ranking) {
        rows.push_back({{"position", e.position}, {"word", sentence.words[e.position]},
                        {"loss", e.loss}});
      }
      doc["ranking"] = std::move(rows);
      *s.out << doc.dump() << '\n';
    } else {
      for (std::size_t r = 0; r < ranking.size(); ++r) {
        const auto& e = ranking[r];
        *s.out << fmt::format("{}\t{}\t{}\t{}\t{:.6f}\n", line_no, r + 1, e.position,
                              sentence.words[e.position], e.loss);
      }
    }
  }
  return kExitOk;
}

int cmd_stats(const Options& o, std::istream& in, std::ostream& out, std::ostream&) {
  check_format(o.format);
  check_stats_flags(o.stats);
  std::vector<double> alphas = o.alphas.empty() ? std::vector<double>{2.0} : o.alphas;
  for (double a : alphas) {
    if (!std::isfinite(a)) throw UsageError("--alpha must be a finite number");
  }
  const auto loaded = load_embeddings_file(o.embeddings);
  const auto stats = compute_stats(loaded.store, o.stats);
  Streams s;
  open_streams(s, o, in, out);
  const char* method = stats.method == StatsMethod::kExact ? "exact" : "sampled";
  if (o.format == "kv") {
    nlohmann::ordered_json doc;
    doc["vocabulary"] = loaded.store.size();
    doc["dim"] = loaded.store.dim();
    doc["duplicates"] = loaded.report.duplicates;
    doc["method"] = method;
    doc["pair_count"] = stats.pair_count;
    doc["seed"] = stats.seed;
    doc["include_diagonal"] = o.stats.include_diagonal;
    doc["mu"] = stats.mu;
    doc["sigma"] = stats.sigma;
    auto th = nlohmann::ordered_json::array();
    for (double a : alphas) th.push_back({{"alpha", a}, {"threshold", stats.mu + a * stats.sigma}});
    doc["thresholds"] = std::move(th);
    *s.out << doc.dump(2) << '\n';
  } else {
    *s.out << fmt::format("# embeddings: {} words, dim {}, {} duplicates, {} skipped lines\n",
                          loaded.store.size(), loaded.store.dim(), loaded.report.duplicates,
                          loaded.report.skipped_lines);
    *s.out << fmt::format("# method={} pairs={} seed={} diagonal={}\n", method, stats.pair_count,
                          stats.seed, o.stats.include_diagonal ? "included" : "excluded");
    *s.out << fmt::format("mu\t{}\n", stats.mu);
    *s.out << fmt::format("sigma\t{}\n", stats.sigma);
    for (double a : alphas) {
      *s.out << fmt::format("threshold[alpha={}]\t{}\n", a, stats.mu + a * stats.sigma);
    }
  }
  return kExitOk;
}

int cmd_eval(const Options& o, std::istream& in, std::ostream& out, std::ostream& err) {
  const auto config = defense_config(o.defense);
  check_stats_flags(o.stats);
  check_format(o.format);
  split_spec(o.backend, "--backend", {"table", "corpus", "onnx"});
  split_spec(o.classifier, "--classifier", {"keywords", "onnx"});
  if (!o.encoder.empty()) split_spec(o.encoder, "--encoder", {"onnx"});
  std::string log_path = o.log;
  if (log_path.empty()) {
    if (o.output.empty() || o.output == "-") {
      throw UsageError("--log is required when the report goes to stdout");
    }
    log_path = o.output + ".records.jsonl";
  }

  const auto corpus = read_corpus_file(o.corpus);
  const auto classifier = load_classifier(o.classifier);
  const auto backend = load_backend(o.backend);
  const auto store = load_embeddings_file(o.embeddings).store;
  const auto stats = compute_stats(store, o.stats);
  std::unique_ptr<SentenceEncoder> encoder;
  if (o.encoder.empty()) {
    encoder = std::make_unique<MeanEmbeddingEncoder>(store);
  } else {
    encoder = std::make_unique<GraphSentenceEncoder>(
        GraphSentenceEncoder::from_manifest(o.encoder.substr(o.encoder.find(':') + 1)));
  }

  const auto result = evaluate(
      corpus,
      [&](const TokenizedSentence& s) { return defend(s, *backend, store, stats, config); },
      *classifier, *encoder);

  std::map<std::string, std::string> header{
      {"alpha", fmt::format("{}", config.alpha)},
      {"n", fmt::format("{}", config.n)},
      {"stats", stats_header(stats, config.alpha)},
      {"encoder", o.encoder.empty() ? "mean-embedding" : o.encoder},
  };
  Streams s;
  Options no_input = o;
  no_input.input.clear();
  open_streams(s, no_input, in, out);
  if (o.format == "kv") {
    write_report_json(result.report, *s.out, header);
  } else {
    write_report_table(result.report, *s.out, header);
  }
  std::ofstream log(log_path);
  if (!log) throw DataError(fmt::format("cannot open record log '{}'", log_path));
  write_record_log(result.records, log);
  if (result.report.skipped_missing_adversarial > 0) {
    err << fmt::format("warning: skipped {} attacked records without adversarial text\n",
                       result.report.skipped_missing_adversarial);
  }
  return kExitOk;
}

int cmd_attack_sim(const Options& o, std::istream& in, std::ostream& out, std::ostream&) {
  if (o.budget < 1) throw UsageError("--budget must be at least 1");
  if (!std::isfinite(o.floor)) throw UsageError("--floor must be a finite number");
  split_spec(o.classifier, "--classifier", {"keywords", "onnx"});

  auto corpus = read_corpus_file(o.corpus);
  const auto classifier = load_classifier(o.classifier);
  const auto store = load_embeddings_file(o.embeddings).store;
  AttackOptions opts;
  opts.budget = o.budget;
  opts.seed = o.stats.seed;
  opts.neighbor_floor = o.floor;

  std::size_t attempted = 0;
  std::size_t flipped = 0;
  std::size_t misclassified = 0;
  for (auto& r : corpus) {
    if (r.kind != RecordKind::kClean) continue;
    const auto gold = classifier->label_index(r.gold_label);
    if (!gold) {
      throw DataError(fmt::format("record '{}': label '{}' is not a classifier label", r.id,
                                  r.gold_label));
    }
    if (classifier->predict(r.original_text).label != *gold) {
      ++misclassified;
      continue;
    }
    ++attempted;
    const auto res = synthetic_attack(r, *classifier, store, opts);
    if (res.success) {
      ++flipped;
      r.adversarial_text = res.text;
      r.kind = RecordKind::kAttacked;
    }
  }
  Streams s;
  Options no_input = o;
  no_input.input.clear();
  open_streams(s, no_input, in, out);
  *s.out << fmt::format(
      "# attack-sim seed={} budget={} floor={} attempted={} flipped={} misclassified={}\n",
      opts.seed, opts.budget, opts.neighbor_floor, attempted, flipped, misclassified);
  write_corpus(corpus, *s.out);
  return kExitOk;
}

// --- flag registration -------------------------------------------------------

void add_stats_flags(CLI::App* app, StatsFlags& f) {
  app->add_option("--stats-mode", f.mode, "Similarity statistics: auto, exact or sampled")
      ->capture_default_str();
  app->add_option("--pairs", f.pairs, "Pairs drawn in sampled mode")->capture_default_str();
  app->add_option("--seed", f.seed, "RNG seed")->capture_default_str();
  app->add_option("--exact-cap", f.exact_cap, "Largest vocabulary for exact mode")
      ->capture_default_str();
  app->add_flag("--include-diagonal", f.include_diagonal,
                "Compute statistics over the full matrix including self-pairs");
}

void add_defense_flags(CLI::App* app, DefenseFlags& f) {
  app->add_option("--alpha", f.alpha, "Similarity threshold multiplier")->capture_default_str();
  app->add_option("--n", f.n, "Maximum replacements per sentence")->capture_default_str();
  app->add_option("--max-positions", f.max_positions, "Importance ranks examined")
      ->capture_default_str();
  app->add_option("--top-k", f.top_k, "Candidates scanned per position")->capture_default_str();
  app->add_option("--min-word-length", f.min_word_length, "Shorter words are never replaced")
      ->capture_default_str();
  app->add_option("--skip-rule", f.skip_rule,
                  "Skip a position when the top prediction ('top') or any scanned "
                  "candidate ('any') is the original word")
      ->capture_default_str();
}

}  // namespace

int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out,
        std::ostream& err) {
  CLI::App app{"maskdef: masked-language-model defense against adversarial word substitutions"};
  app.name("maskdef");
  app.require_subcommand(1);
  Options o;

  auto* defend_cmd = app.add_subcommand("defend", "Repair each input line");
  defend_cmd->add_option("--embeddings", o.embeddings, "Embedding file (text or MDEF cache)")
      ->required();
  defend_cmd->add_option("--backend", o.backend, "table:<path> | corpus:<path> | onnx:<manifest>")
      ->required();
  defend_cmd->add_option("--input", o.input, "Input file (default stdin)");
  defend_cmd->add_option("--output", o.output, "Output file (default stdout)");
  defend_cmd->add_option("--trace", o.trace, "Write a per-line replacement audit (JSON lines)");
  add_defense_flags(defend_cmd, o.defense);
  add_stats_flags(defend_cmd, o.stats);

  auto* rank_cmd = app.add_subcommand("rank", "Print masked-loss importance per line");
  rank_cmd->add_option("--backend", o.backend, "table:<path> | corpus:<path> | onnx:<manifest>")
      ->required();
  rank_cmd->add_option("--input", o.input, "Input file (default stdin)");
  rank_cmd->add_option("--output", o.output, "Output file (default stdout)");
  rank_cmd->add_option("--format", o.format, "table or kv")->capture_default_str();

  auto* stats_cmd = app.add_subcommand("stats", "Pairwise cosine statistics and thresholds");
  stats_cmd->add_option("--embeddings", o.embeddings, "Embedding file")->required();
  stats_cmd->add_option("--mode", o.stats.mode, "auto, exact or sampled")->capture_default_str();
  stats_cmd->add_option("--pairs", o.stats.pairs, "Pairs drawn in sampled mode")
      ->capture_default_str();
  stats_cmd->add_option("--seed", o.stats.seed, "RNG seed")->capture_default_str();
  stats_cmd->add_option("--exact-cap", o.stats.exact_cap, "Largest vocabulary for exact mode")
      ->capture_default_str();
  stats_cmd->add_flag("--include-diagonal", o.stats.include_diagonal, "Include self-pairs");
  stats_cmd->add_option("--alpha", o.alphas, "Alpha values to report thresholds for");
  stats_cmd->add_option("--output", o.output, "Output file (default stdout)");
  stats_cmd->add_option("--format", o.format, "table or kv")->capture_default_str();

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate the defense on a labelled corpus");
  eval_cmd->add_option("--corpus", o.corpus, "Corpus (JSON lines)")->required();
  eval_cmd->add_option("--classifier", o.classifier, "keywords:<path> | onnx:<manifest>")
      ->required();
  eval_cmd->add_option("--encoder", o.encoder, "onnx:<manifest> (default: mean word vectors)");
  eval_cmd->add_option("--embeddings", o.embeddings, "Embedding file")->required();
  eval_cmd->add_option("--backend", o.backend, "table:<path> | corpus:<path> | onnx:<manifest>")
      ->required();
  eval_cmd->add_option("--output", o.output, "Report file (default stdout)");
  eval_cmd->add_option("--log", o.log, "Per-record log (JSON lines)");
  eval_cmd->add_option("--format", o.format, "table or kv")->capture_default_str();
  add_defense_flags(eval_cmd, o.defense);
  add_stats_flags(eval_cmd, o.stats);

  auto* attack_cmd = app.add_subcommand("attack-sim", "Generate a synthetic adversarial corpus");
  attack_cmd->add_option("--corpus", o.corpus, "Clean corpus (JSON lines)")->required();
  attack_cmd->add_option("--classifier", o.classifier, "keywords:<path> | onnx:<manifest>")
      ->required();
  attack_cmd->add_option("--embeddings", o.embeddings, "Embedding file")->required();
  attack_cmd->add_option("--budget", o.budget, "Maximum word swaps")->capture_default_str();
  attack_cmd->add_option("--seed", o.stats.seed, "RNG seed for tie-breaking")
      ->capture_default_str();
  attack_cmd->add_option("--floor", o.floor, "Minimum neighbour cosine")->capture_default_str();
  attack_cmd->add_option("--output", o.output, "Output corpus (default stdout)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (defend_cmd->parsed()) return cmd_defend(o, in, out, err);
    if (rank_cmd->parsed()) return cmd_rank(o, in, out, err);
    if (stats_cmd->parsed()) return cmd_stats(o, in, out, err);
    if (eval_cmd->parsed()) return cmd_eval(o, in, out, err);
    if (attack_cmd->parsed()) return cmd_attack_sim(o, in, out, err);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DataError& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace maskdef::cli
