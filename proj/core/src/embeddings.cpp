#include "maskdef/embeddings.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <thread>

#include <fmt/format.h>

#include "maskdef/errors.hpp"
#include "maskdef/text.hpp"

namespace maskdef {

class EmbeddingLoader {
 public:
  explicit EmbeddingLoader(LoadReport& report) : report_(report) {}

  // Takes ownership of a raw row; returns false when the word was a duplicate
  // or the row had zero norm.
  bool add(std::string_view word, std::span<const double> raw) {
    if (store_.dim_ == 0) store_.dim_ = raw.size();
    double norm2 = 0.0;
    for (double v : raw) norm2 += v * v;
    if (!(norm2 > 0.0) || !std::isfinite(norm2)) {
      ++report_.skipped_lines;
      return false;
    }
    std::string folded = fold_case(word);
    if (store_.index_.contains(folded)) {
      ++report_.duplicates;
      return false;
    }
    const double inv = 1.0 / std::sqrt(norm2);
    for (double v : raw) store_.vectors_.push_back(static_cast<float>(v * inv));
    store_.index_.emplace(folded, store_.words_.size());
    store_.words_.push_back(std::move(folded));
    ++report_.loaded;
    return true;
  }

  // Rows already normalized on disk are renormalized in double anyway so the
  // in-memory result is identical regardless of the load path.
  EmbeddingStore finish() {
    if (store_.words_.empty()) throw DataError("embedding vocabulary is empty");
    return std::move(store_);
  }

 private:
  EmbeddingStore store_;
  LoadReport& report_;
};

namespace {

bool looks_like_header(const std::vector<std::string_view>& fields) {
  if (fields.size() != 2) return false;
  for (auto f : fields) {
    if (f.empty() || !std::all_of(f.begin(), f.end(),
                                  [](char c) { return c >= '0' && c <= '9'; })) {
      return false;
    }
  }
  return true;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const std::size_t begin = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > begin) fields.push_back(line.substr(begin, i - begin));
  }
  return fields;
}

LoadedEmbeddings load_text(std::istream& in) {
  LoadedEmbeddings out;
  EmbeddingLoader loader(out.report);
  std::string line;
  std::size_t line_no = 0;
  std::size_t dim = 0;
  std::vector<double> raw;
  while (std::getline(in, line)) {
    ++line_no;
    auto fields = split_fields(line);
    if (fields.empty() || (line_no == 1 && looks_like_header(fields))) {
      ++out.report.skipped_lines;
      continue;
    }
    if (fields.size() < 2) {
      throw DataError(fmt::format("line {}: expected a word followed by vector components", line_no));
    }
    const std::size_t d = fields.size() - 1;
    if (dim == 0) {
      dim = d;
    } else if (d != dim) {
      throw DataError(fmt::format("line {}: dimension mismatch (expected {}, found {})",
                                  line_no, dim, d));
    }
    raw.assign(d, 0.0);
    for (std::size_t k = 0; k < d; ++k) {
      auto f = fields[k + 1];
      auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), raw[k]);
      if (ec != std::errc() || ptr != f.data() + f.size() || !std::isfinite(raw[k])) {
        throw DataError(fmt::format("line {}: non-numeric component '{}'", line_no, f));
      }
    }
    loader.add(fields[0], raw);
  }
  out.store = loader.finish();
  return out;
}

template <typename T>
T read_le(std::istream& in, const char* what) {
  unsigned char buf[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(buf), sizeof(T))) {
    throw DataError(fmt::format("binary cache truncated while reading {}", what));
  }
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= std::uint64_t{buf[i]} << (8 * i);
  if constexpr (std::is_same_v<T, float>) {
    return std::bit_cast<float>(static_cast<std::uint32_t>(v));
  } else {
    return static_cast<T>(v);
  }
}

template <typename T>
void write_le(std::ostream& out, T value) {
  std::uint64_t v;
  if constexpr (std::is_same_v<T, float>) {
    v = std::bit_cast<std::uint32_t>(value);
  } else {
    v = static_cast<std::uint64_t>(value);
  }
  unsigned char buf[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

LoadedEmbeddings load_binary(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || !std::equal(magic, magic + 4, kCacheMagic)) {
    throw DataError("binary cache: bad magic (expected MDEF)");
  }
  const auto version = read_le<std::uint32_t>(in, "version");
  if (version != kCacheVersion) {
    throw DataError(fmt::format("binary cache: unsupported version {}", version));
  }
  const auto count = read_le<std::uint32_t>(in, "vocabulary size");
  const auto dim = read_le<std::uint32_t>(in, "dimension");
  if (count == 0) throw DataError("embedding vocabulary is empty");
  if (dim == 0) throw DataError("binary cache: zero dimension");
  std::vector<std::string> words(count);
  for (auto& w : words) {
    const auto len = read_le<std::uint32_t>(in, "word length");
    w.resize(len);
    if (!in.read(w.data(), len)) throw DataError("binary cache truncated while reading words");
  }
  LoadedEmbeddings out;
  EmbeddingLoader loader(out.report);
  std::vector<double> raw(dim);
  for (std::uint32_t i = 0; i < count; ++i) {
    for (auto& v : raw) v = read_le<float>(in, "vector components");
    loader.add(words[i], raw);
  }
  out.store = loader.finish();
  return out;
}

}  // namespace

EmbeddingStore EmbeddingStore::from_rows(std::span<const std::string> words,
                                         std::span<const std::vector<float>> rows,
                                         LoadReport* report) {
  if (words.size() != rows.size()) throw InvalidArgument("words and rows differ in length");
  LoadReport local;
  EmbeddingLoader loader(report ? *report : local);
  std::vector<double> raw;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i > 0 && rows[i].size() != rows[0].size()) {
      throw DataError(fmt::format("row {}: dimension mismatch", i));
    }
    raw.assign(rows[i].begin(), rows[i].end());
    loader.add(words[i], raw);
  }
  return loader.finish();
}

bool EmbeddingStore::contains(std::string_view word) const {
  return index_of(word).has_value();
}

std::optional<std::size_t> EmbeddingStore::index_of(std::string_view word) const {
  auto it = index_.find(fold_case(word));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

double EmbeddingStore::cosine_at(std::size_t a, std::size_t b) const {
  const float* x = vectors_.data() + a * dim_;
  const float* y = vectors_.data() + b * dim_;
  double dot = 0.0;
  for (std::size_t k = 0; k < dim_; ++k) {
    dot += static_cast<double>(x[k]) * static_cast<double>(y[k]);
  }
  return std::clamp(dot, -1.0, 1.0);
}

LoadedEmbeddings load_embeddings(std::istream& source, EmbeddingFormat format) {
  if (source.peek() == std::char_traits<char>::eof()) {
    throw DataError("embedding source is empty");
  }
  return format == EmbeddingFormat::kText ? load_text(source) : load_binary(source);
}

LoadedEmbeddings load_embeddings_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open embeddings file '{}'", path));
  char magic[4] = {};
  in.read(magic, 4);
  const bool binary = in.gcount() == 4 && std::equal(magic, magic + 4, kCacheMagic);
  in.clear();
  in.seekg(0);
  try {
    return load_embeddings(in, binary ? EmbeddingFormat::kBinaryCache : EmbeddingFormat::kText);
  } catch (const DataError& e) {
    throw DataError(fmt::format("{}: {}", path, e.what()));
  }
}

void write_binary_cache(const EmbeddingStore& store, std::ostream& out) {
  out.write(kCacheMagic, 4);
  write_le<std::uint32_t>(out, kCacheVersion);
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(store.size()));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(store.dim()));
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& w = store.word(i);
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(w.size()));
    out.write(w.data(), static_cast<std::streamsize>(w.size()));
  }
  for (std::size_t i = 0; i < store.size(); ++i) {
    for (float v : store.row(i)) write_le<float>(out, v);
  }
}

void write_text(const EmbeddingStore& store, std::ostream& out) {
  for (std::size_t i = 0; i < store.size(); ++i) {
    std::string line = store.word(i);
    for (float v : store.row(i)) fmt::format_to(std::back_inserter(line), " {:.9g}", v);
    line.push_back('\n');
    out << line;
  }
}

std::optional<double> cosine(const EmbeddingStore& store, std::string_view a,
                             std::string_view b) {
  auto ia = store.index_of(a);
  auto ib = store.index_of(b);
  if (!ia || !ib) return std::nullopt;
  return store.cosine_at(*ia, *ib);
}

namespace {

// Running mean / M2 (Welford), mergeable with Chan's formula.
struct Moments {
  double count = 0.0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double x, double weight = 1.0) {
    const double n = count + weight;
    const double delta = x - mean;
    mean += delta * weight / n;
    m2 += weight * delta * (x - mean);
    count = n;
  }

  void merge(const Moments& o) {
    if (o.count == 0.0) return;
    if (count == 0.0) {
      *this = o;
      return;
    }
    const double n = count + o.count;
    const double delta = o.mean - mean;
    mean += delta * o.count / n;
    m2 += o.m2 + delta * delta * count * o.count / n;
    count = n;
  }
};

template <typename Fn>
std::vector<Moments> run_chunks(std::size_t chunks, unsigned threads, Fn&& fn) {
  std::vector<Moments> parts(chunks);
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(chunks, 1)));
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t c = next++; c < chunks; c = next++) parts[c] = fn(c);
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  return parts;
}

// Uniform integer in [0, bound) by rejection, so the stream is identical on
// every standard library.
std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % bound;
}

constexpr std::size_t kExactRowsPerChunk = 32;
constexpr std::uint64_t kSamplesPerChunk = 1 << 16;

}  // namespace

SimilarityStats similarity_stats(const EmbeddingStore& store,
                                 const StatsOptions& options) {
  const std::size_t v = store.size();
  SimilarityStats stats;
  stats.method = options.method;
  Moments total;

  if (options.method == StatsMethod::kExact) {
    if (v > options.exact_cap) {
      throw InvalidArgument(fmt::format(
          "exact statistics over {} words exceeds the cap of {}; use sampled mode", v,
          options.exact_cap));
    }
    if (v < 2 && !options.include_diagonal) {
      throw InvalidArgument("similarity statistics need at least two words");
    }
    const std::size_t chunks = (v + kExactRowsPerChunk - 1) / kExactRowsPerChunk;
    const double off_weight = options.include_diagonal ? 2.0 : 1.0;
    auto parts = run_chunks(chunks, options.threads, [&](std::size_t c) {
      Moments m;
      const std::size_t end = std::min(v, (c + 1) * kExactRowsPerChunk);
      for (std::size_t i = c * kExactRowsPerChunk; i < end; ++i) {
        if (options.include_diagonal) m.add(store.cosine_at(i, i));
        for (std::size_t j = i + 1; j < v; ++j) m.add(store.cosine_at(i, j), off_weight);
      }
      return m;
    });
    for (const auto& p : parts) total.merge(p);
    stats.pair_count = static_cast<std::uint64_t>(total.count);
    stats.seed = 0;
  } else {
    if (options.pair_count < kMinSampledPairs) {
      throw InvalidArgument(fmt::format("sampled statistics need at least {} pairs",
                                        kMinSampledPairs));
    }
    if (v < 2) throw InvalidArgument("similarity statistics need at least two words");
    const std::uint64_t n = options.pair_count;
    const std::size_t chunks = static_cast<std::size_t>((n + kSamplesPerChunk - 1) / kSamplesPerChunk);
    auto parts = run_chunks(chunks, options.threads, [&](std::size_t c) {
      std::seed_seq seq{static_cast<std::uint32_t>(options.seed),
                        static_cast<std::uint32_t>(options.seed >> 32),
                        static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(c >> 32)};
      std::mt19937_64 rng(seq);
      Moments m;
      const std::uint64_t begin = std::uint64_t{c} * kSamplesPerChunk;
      const std::uint64_t end = std::min(n, begin + kSamplesPerChunk);
      for (std::uint64_t s = begin; s < end; ++s) {
        const auto i = static_cast<std::size_t>(bounded(rng, v));
        std::size_t j;
        if (options.include_diagonal) {
          j = static_cast<std::size_t>(bounded(rng, v));
        } else {
          j = static_cast<std::size_t>(bounded(rng, v - 1));
          if (j >= i) ++j;
        }
        m.add(store.cosine_at(i, j));
      }
      return m;
    });
    for (const auto& p : parts) total.merge(p);
    stats.pair_count = n;
    stats.seed = options.seed;
  }
  stats.mu = total.mean;
  stats.sigma = total.count > 0 ? std::sqrt(std::max(0.0, total.m2 / total.count)) : 0.0;
  return stats;
}

const char* to_string(SimilarityReason reason) {
  switch (reason) {
    case SimilarityReason::kPassed: return "passed";
    case SimilarityReason::kOriginalNotInVocab: return "original-not-in-V_C";
    case SimilarityReason::kCandidateNotInVocab: return "candidate-not-in-V_C";
    case SimilarityReason::kBelowThreshold: return "below-threshold";
  }
  return "unknown";
}

SimilarityVerdict is_similar(const EmbeddingStore& store,
                             const SimilarityStats& stats, double alpha,
                             std::string_view original,
                             std::string_view candidate) {
  SimilarityVerdict verdict;
  auto io = store.index_of(original);
  if (!io) {
    verdict.reason = SimilarityReason::kOriginalNotInVocab;
    return verdict;
  }
  auto ic = store.index_of(candidate);
  if (!ic) {
    verdict.reason = SimilarityReason::kCandidateNotInVocab;
    return verdict;
  }
  verdict.cosine = store.cosine_at(*io, *ic);
  const SimilarityThreshold threshold(stats, alpha);
  verdict.similar = verdict.cosine >= threshold.value();
  verdict.reason = verdict.similar ? SimilarityReason::kPassed : SimilarityReason::kBelowThreshold;
  return verdict;
}

}  // namespace maskdef
