#include <benchmark/benchmark.h>

#include <fstream>
#include <random>
#include <string>

#include "maskdef/defense.hpp"
#include "maskdef/embeddings.hpp"
#include "maskdef/mlm.hpp"

namespace {

using namespace maskdef;

std::string fixture(const char* name) { return std::string(MASKDEF_FIXTURE_DIR) + "/" + name; }

std::vector<std::string> corpus_lines() {
  std::ifstream in(fixture("corpus50.txt"));
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  return lines;
}

// Random store of `n` words in dimension 300.
EmbeddingStore random_store(std::size_t n) {
  std::mt19937_64 rng(1);
  std::normal_distribution<float> g;
  std::vector<std::string> words;
  std::vector<std::vector<float>> rows;
  for (std::size_t i = 0; i < n; ++i) {
    words.push_back("w" + std::to_string(i));
    auto& r = rows.emplace_back(300);
    for (auto& x : r) x = g(rng);
  }
  return EmbeddingStore::from_rows(words, rows);
}

void BM_StatsExact(benchmark::State& state) {
  const auto store = random_store(static_cast<std::size_t>(state.range(0)));
  StatsOptions o;
  o.method = StatsMethod::kExact;
  for (auto _ : state) benchmark::DoNotOptimize(similarity_stats(store, o));
  const auto n = static_cast<double>(state.range(0));
  state.counters["pairs/s"] =
      benchmark::Counter(n * (n - 1) / 2, benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_StatsExact)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond);

void BM_StatsSampled(benchmark::State& state) {
  const auto store = random_store(5000);
  StatsOptions o;
  o.pair_count = static_cast<std::uint64_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(similarity_stats(store, o));
  state.counters["pairs/s"] = benchmark::Counter(static_cast<double>(state.range(0)),
                                                 benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_StatsSampled)->Arg(100'000)->Arg(1'000'000)->Unit(benchmark::kMillisecond);

void BM_CorpusMlmPredict(benchmark::State& state) {
  const auto lines = corpus_lines();
  const CorpusMlm mlm(lines);
  const auto s = tokenize("the movie was really clever and the cast felt long");
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(mlm.predict_masked(s, i, 50));
    i = (i + 1) % s.size();
  }
}
BENCHMARK(BM_CorpusMlmPredict);

void BM_Defend(benchmark::State& state) {
  const auto lines = corpus_lines();
  const CorpusMlm mlm(lines);
  const auto store = load_embeddings_file(fixture("emb200.txt")).store;
  StatsOptions o;
  o.method = StatsMethod::kExact;
  const auto stats = similarity_stats(store, o);
  const auto s = tokenize(lines[static_cast<std::size_t>(state.range(0)) % lines.size()]);
  DefenseConfig c;
  for (auto _ : state) benchmark::DoNotOptimize(defend(s, mlm, store, stats, c));
}
BENCHMARK(BM_Defend)->Arg(0)->Arg(7);

}  // namespace

BENCHMARK_MAIN();
