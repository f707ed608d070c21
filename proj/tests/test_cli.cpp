#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cli.hpp"
#include "oracles.hpp"

namespace maskdef {
namespace {

using testing::fixture_path;
namespace fs = std::filesystem;

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

Run run_cli(const std::vector<std::string>& args, const std::string& stdin_text = "") {
  std::istringstream in(stdin_text);
  std::ostringstream out, err;
  Run r;
  r.code = cli::run(args, in, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string temp_file(const std::string& name) {
  const auto dir = fs::path(::testing::TempDir()) / "maskdef_cli";
  fs::create_directories(dir);
  return (dir / name).string();
}

// Set MASKDEF_UPDATE_GOLDEN=1 to rewrite the files after an intended change.
void expect_golden(const std::string& name, const std::string& actual) {
  const std::string path = std::string(MASKDEF_GOLDEN_DIR) + "/" + name;
  if (const char* u = std::getenv("MASKDEF_UPDATE_GOLDEN"); u && std::string(u) == "1") {
    std::ofstream(path, std::ios::binary) << actual;
    return;
  }
  ASSERT_TRUE(fs::exists(path)) << "missing golden " << path;
  EXPECT_EQ(actual, testing::read_file(path)) << "golden " << name;
}

std::vector<std::string> lines_of(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::vector<std::string> defend_args() {
  return {"defend", "--embeddings", fixture_path("movie_emb.txt"), "--backend",
          "table:" + fixture_path("movie_table.json"), "--input", fixture_path("movie_input.txt")};
}

std::vector<std::string> eval_args(const std::string& log) {
  return {"eval",          "--corpus",     fixture_path("senti_eval.jsonl"),
          "--classifier",  "keywords:" + fixture_path("senti_keywords.txt"),
          "--embeddings",  fixture_path("senti_emb.txt"),
          "--backend",     "corpus:" + fixture_path("senti_train.txt"),
          "--log",         log};
}

TEST(CliDefend, Golden) {
  const auto r = run_cli(defend_args());
  ASSERT_EQ(r.code, 0) << r.err;
  expect_golden("defend_movie.txt", r.out);
  expect_golden("defend_movie.stderr.txt", r.err);
  const auto out = lines_of(r.out);
  ASSERT_EQ(out.size(), 4u);
  EXPECT_EQ(out[0], testing::oracle_defend(testing::movie_instance(), 2.0, 3).text);
  EXPECT_EQ(out[1], "");
}

TEST(CliDefend, HeaderReportsThreshold) {
  const auto r = run_cli(defend_args());
  const auto [words, rows] = testing::read_raw(fixture_path("movie_emb.txt"));
  const auto m = testing::brute_force_stats(rows);
  const auto pos = r.err.find("threshold=");
  ASSERT_NE(pos, std::string::npos) << r.err;
  EXPECT_NEAR(std::stod(r.err.substr(pos + 10)), m.mu + 2.0 * m.sigma, 1e-6);
  EXPECT_NE(r.err.find("method=exact"), std::string::npos);
}

TEST(CliDefend, TraceGolden) {
  const auto trace = temp_file("trace.jsonl");
  auto args = defend_args();
  args.insert(args.end(), {"--trace", trace});
  ASSERT_EQ(run_cli(args).code, 0);
  const auto text = testing::read_file(trace);
  expect_golden("defend_movie.trace.jsonl", text);
  const auto first = nlohmann::json::parse(lines_of(text).at(0));
  ASSERT_EQ(first["replacements"].size(), 2u);
  EXPECT_EQ(first["replacements"][0]["replacement"], "awful");
  EXPECT_EQ(first["replacements"][0]["k"], 2);
  EXPECT_EQ(first["positions_examined"], 6);
}

TEST(CliDefend, StdinAndOutputFile) {
  const auto out = temp_file("defended.txt");
  const auto r = run_cli({"defend", "--embeddings", fixture_path("movie_emb.txt"), "--backend",
                          "table:" + fixture_path("movie_table.json"), "--output", out},
                         "The flick was DREADFUL to watch.\r\n");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "");
  EXPECT_EQ(testing::read_file(out), "The movie was AWFUL to watch.\n");
}

TEST(CliDefend, HugeAlphaIsIdentity) {
  auto args = defend_args();
  args.insert(args.end(), {"--alpha", "1e9"});
  const auto r = run_cli(args);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, testing::read_file(fixture_path("movie_input.txt")));
}

TEST(CliDefend, EmptyInputEmptyOutput) {
  const auto r = run_cli({"defend", "--embeddings", fixture_path("movie_emb.txt"), "--backend",
                          "table:" + fixture_path("movie_table.json")});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "");
}

TEST(CliDefend, Deterministic) {
  const auto a = run_cli(defend_args());
  const auto b = run_cli(defend_args());
  EXPECT_EQ(a.out, b.out);
  EXPECT_EQ(a.err, b.err);
  auto sampled = defend_args();
  sampled.insert(sampled.end(), {"--stats-mode", "sampled", "--pairs", "5000"});
  EXPECT_EQ(run_cli(sampled).out, run_cli(sampled).out);
}

TEST(CliRank, Golden) {
  const auto table = run_cli({"rank", "--backend", "table:" + fixture_path("rank_two.json"),
                              "--input", fixture_path("rank_two_input.txt")});
  ASSERT_EQ(table.code, 0) << table.err;
  EXPECT_EQ(table.out, "1\t1\t1\thops\t2.000000\n1\t2\t0\trabbit\t0.100000\n");
  const auto corpus = run_cli({"rank", "--backend", "corpus:" + fixture_path("senti_train.txt"),
                               "--format", "kv"},
                              "the movie was great\nthis film is really dull\n");
  ASSERT_EQ(corpus.code, 0) << corpus.err;
  expect_golden("rank_senti.jsonl", corpus.out);
  const auto doc = nlohmann::json::parse(lines_of(corpus.out).at(1));
  EXPECT_EQ(doc["ranking"][0]["word"], "dull");  // unseen in the corpus
}

TEST(CliStats, Golden) {
  const auto r = run_cli({"stats", "--embeddings", fixture_path("emb200.txt"), "--alpha", "1",
                          "--alpha", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  expect_golden("stats_emb200.txt", r.out);
  const auto kv = run_cli({"stats", "--embeddings", fixture_path("emb200.txt"), "--format", "kv",
                           "--mode", "sampled", "--pairs", "20000", "--seed", "7"});
  ASSERT_EQ(kv.code, 0) << kv.err;
  expect_golden("stats_emb200_sampled.json", kv.out);
}

TEST(CliStats, MatchesBruteForce) {
  const auto r = run_cli({"stats", "--embeddings", fixture_path("emb200.txt"), "--format", "kv"});
  const auto doc = nlohmann::json::parse(r.out);
  const auto [words, rows] = testing::read_raw(fixture_path("emb200.txt"));
  const auto m = testing::brute_force_stats(rows);
  EXPECT_NEAR(doc["mu"].get<double>(), m.mu, 1e-6);
  EXPECT_NEAR(doc["sigma"].get<double>(), m.sigma, 1e-6);
}

TEST(CliEval, Golden) {
  const auto log = temp_file("eval.records.jsonl");
  const auto r = run_cli(eval_args(log));
  ASSERT_EQ(r.code, 0) << r.err;
  expect_golden("eval_senti.txt", r.out);
  expect_golden("eval_senti.records.jsonl", testing::read_file(log));
  EXPECT_NE(r.err.find("skipped 1 attacked"), std::string::npos) << r.err;

  auto kv = eval_args(temp_file("eval2.records.jsonl"));
  kv.insert(kv.end(), {"--format", "kv"});
  const auto j = run_cli(kv);
  ASSERT_EQ(j.code, 0) << j.err;
  expect_golden("eval_senti.json", j.out);
}

TEST(CliEval, LogDefaultsNextToReport) {
  const auto report = temp_file("report.json");
  fs::remove(report + ".records.jsonl");
  auto args = eval_args("");
  args.resize(args.size() - 2);
  args.insert(args.end(), {"--output", report});
  ASSERT_EQ(run_cli(args).code, 0);
  EXPECT_TRUE(fs::exists(report + ".records.jsonl"));
}

TEST(CliEval, StdoutReportNeedsLog) {
  auto args = eval_args("");
  args.resize(args.size() - 2);
  EXPECT_EQ(run_cli(args).code, cli::kExitUsage);
}

TEST(CliAttackSim, Golden) {
  const auto r = run_cli({"attack-sim", "--corpus", fixture_path("senti_clean.jsonl"),
                          "--classifier", "keywords:" + fixture_path("senti_keywords.txt"),
                          "--embeddings", fixture_path("senti_emb.txt")});
  ASSERT_EQ(r.code, 0) << r.err;
  expect_golden("attack_senti.jsonl", r.out);
  EXPECT_EQ(r.out, run_cli({"attack-sim", "--corpus", fixture_path("senti_clean.jsonl"),
                            "--classifier", "keywords:" + fixture_path("senti_keywords.txt"),
                            "--embeddings", fixture_path("senti_emb.txt")})
                       .out);
}

TEST(CliExitCodes, Usage) {
  EXPECT_EQ(run_cli({}).code, cli::kExitUsage);
  EXPECT_EQ(run_cli({"frobnicate"}).code, cli::kExitUsage);
  EXPECT_EQ(run_cli({"defend", "--backend", "table:x"}).code, cli::kExitUsage);
  EXPECT_EQ(run_cli({"defend", "--embeddings", "e", "--backend", "bert:x"}).code,
            cli::kExitUsage);
  EXPECT_EQ(run_cli({"stats", "--embeddings", fixture_path("emb200.txt"), "--mode", "sampled",
                     "--pairs", "999"})
                .code,
            cli::kExitUsage);
  EXPECT_EQ(run_cli({"stats", "--embeddings", fixture_path("emb200.txt"), "--format", "xml"}).code,
            cli::kExitUsage);
  auto nan_alpha = defend_args();
  nan_alpha.insert(nan_alpha.end(), {"--alpha", "nan"});
  EXPECT_EQ(run_cli(nan_alpha).code, cli::kExitUsage);
  // exact mode refused above the cap
  EXPECT_EQ(run_cli({"stats", "--embeddings", fixture_path("emb200.txt"), "--mode", "exact",
                     "--exact-cap", "100"})
                .code,
            cli::kExitUsage);
  EXPECT_EQ(run_cli({"--help"}).code, cli::kExitOk);
}

TEST(CliExitCodes, Data) {
  const auto missing = run_cli({"stats", "--embeddings", "/nonexistent/emb.txt"});
  EXPECT_EQ(missing.code, cli::kExitData);
  EXPECT_NE(missing.err.find("/nonexistent/emb.txt"), std::string::npos) << missing.err;
  const auto bad = run_cli({"stats", "--embeddings", fixture_path("emb_bad_dim.txt")});
  EXPECT_EQ(bad.code, cli::kExitData);
  EXPECT_NE(bad.err.find("line 3"), std::string::npos) << bad.err;
  EXPECT_EQ(run_cli({"defend", "--embeddings", fixture_path("movie_emb.txt"), "--backend",
                     "onnx:/nonexistent/manifest.json"},
                    "x\n")
                .code,
            cli::kExitData);
}

}  // namespace
}  // namespace maskdef
