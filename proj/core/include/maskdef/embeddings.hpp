#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace maskdef {

enum class EmbeddingFormat { kText, kBinaryCache };

struct LoadReport {
  std::size_t loaded = 0;
  std::size_t duplicates = 0;
  std::size_t skipped_lines = 0;  // blank lines, word2vec headers, zero rows
};

/// Vocabulary plus unit-normalized word vectors. Lookups are case-folded.
/// Immutable once built; every query is const and safe to share.
class EmbeddingStore {
 public:
  EmbeddingStore() = default;

  /// Builds a store from raw rows. Rows are normalized; words are case-folded
  /// and the first occurrence of a folded word wins. Zero rows are dropped.
  static EmbeddingStore from_rows(std::span<const std::string> words,
                                  std::span<const std::vector<float>> rows,
                                  LoadReport* report = nullptr);

  std::size_t size() const { return words_.size(); }
  std::size_t dim() const { return dim_; }

  bool contains(std::string_view word) const;
  std::optional<std::size_t> index_of(std::string_view word) const;
  const std::string& word(std::size_t index) const { return words_[index]; }
  std::span<const float> row(std::size_t index) const {
    return {vectors_.data() + index * dim_, dim_};
  }

  /// Dot product of two rows accumulated in double, clamped to [-1, 1].
  double cosine_at(std::size_t a, std::size_t b) const;

  friend class EmbeddingLoader;

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<float> vectors_;
  std::size_t dim_ = 0;
};

struct LoadedEmbeddings {
  EmbeddingStore store;
  LoadReport report;
};

/// Throws DataError on dimension mismatch (naming the line), non-numeric
/// components, bad binary headers and empty vocabularies.
LoadedEmbeddings load_embeddings(std::istream& source, EmbeddingFormat format);

/// Detects the binary cache by its magic bytes, falling back to text.
LoadedEmbeddings load_embeddings_file(const std::string& path);

inline constexpr char kCacheMagic[4] = {'M', 'D', 'E', 'F'};
inline constexpr std::uint32_t kCacheVersion = 1;

void write_binary_cache(const EmbeddingStore& store, std::ostream& out);
void write_text(const EmbeddingStore& store, std::ostream& out);

/// Cosine of two words, or nullopt when either is outside the vocabulary.
std::optional<double> cosine(const EmbeddingStore& store, std::string_view a,
                             std::string_view b);

enum class StatsMethod { kExact, kSampled };

struct SimilarityStats {
  double mu = 0.0;
  double sigma = 0.0;
  StatsMethod method = StatsMethod::kExact;
  std::uint64_t pair_count = 0;
  std::uint64_t seed = 0;

  friend bool operator==(const SimilarityStats&, const SimilarityStats&) = default;
};

struct StatsOptions {
  StatsMethod method = StatsMethod::kSampled;
  std::uint64_t pair_count = 10'000'000;
  std::uint64_t seed = 42;
  std::size_t exact_cap = 5000;
  bool include_diagonal = false;
  unsigned threads = 0;  // 0 = hardware concurrency
};

inline constexpr std::uint64_t kMinSampledPairs = 1000;

/// Mean and population standard deviation of pairwise cosines over unordered
/// distinct word pairs. Exact mode streams every pair; sampled mode draws
/// pairs uniformly. The result depends only on (method, pair_count, seed),
/// never on the thread count.
SimilarityStats similarity_stats(const EmbeddingStore& store,
                                 const StatsOptions& options);

/// mu + alpha * sigma, derived on every read.
class SimilarityThreshold {
 public:
  SimilarityThreshold(const SimilarityStats& stats, double alpha)
      : stats_(stats), alpha_(alpha) {}

  double alpha() const { return alpha_; }
  const SimilarityStats& stats() const { return stats_; }
  double value() const { return stats_.mu + alpha_ * stats_.sigma; }

  void set_alpha(double alpha) { alpha_ = alpha; }
  void set_stats(const SimilarityStats& stats) { stats_ = stats; }

 private:
  SimilarityStats stats_;
  double alpha_;
};

enum class SimilarityReason {
  kPassed,
  kOriginalNotInVocab,
  kCandidateNotInVocab,
  kBelowThreshold,
};

const char* to_string(SimilarityReason reason);

struct SimilarityVerdict {
  bool similar = false;
  SimilarityReason reason = SimilarityReason::kBelowThreshold;
  double cosine = 0.0;  // meaningful only when both words are in vocabulary

  explicit operator bool() const { return similar; }
};

SimilarityVerdict is_similar(const EmbeddingStore& store,
                             const SimilarityStats& stats, double alpha,
                             std::string_view original,
                             std::string_view candidate);

}  // namespace maskdef
