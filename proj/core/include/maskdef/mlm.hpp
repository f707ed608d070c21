#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "maskdef/text.hpp"

namespace maskdef {

struct ScoredWord {
  std::string word;
  double score = 0.0;  // probability under the masked distribution

  friend bool operator==(const ScoredWord&, const ScoredWord&) = default;
};

/// Output of masking one word: the loss of the true word and the most
/// probable replacements, best first.
struct MaskPrediction {
  std::size_t position = 0;
  double loss = 0.0;  // -ln p(true word), nats
  std::vector<ScoredWord> candidates;

  friend bool operator==(const MaskPrediction&, const MaskPrediction&) = default;
};

/// Probability used for a true word the model cannot score.
inline constexpr double kDefaultUnknownFloor = 1e-8;

/// Candidate ordering shared by every backend: score descending, then word
/// ascending. Zero-probability words are never candidates.
void sort_candidates(std::vector<ScoredWord>& candidates);

/// Masked-word predictor. Implementations are deterministic. Those that are
/// not safe for concurrent calls say so through `concurrent_safe()` and are
/// cloned per worker.
class MlmBackend {
 public:
  virtual ~MlmBackend() = default;

  virtual std::size_t vocabulary_size() const = 0;
  virtual bool in_vocabulary(std::string_view word) const = 0;

  /// Throws InvalidArgument when `position` is outside the sentence or
  /// `top_k` is zero.
  MaskPrediction predict_masked(const TokenizedSentence& sentence,
                                std::size_t position, std::size_t top_k) const;

  /// Same as calling predict_masked per position, in order. Every position is
  /// validated before any prediction runs.
  virtual std::vector<MaskPrediction> batch_predict(
      const TokenizedSentence& sentence, std::span<const std::size_t> positions,
      std::size_t top_k) const;

  virtual bool concurrent_safe() const { return true; }
  virtual std::unique_ptr<MlmBackend> clone() const = 0;

 protected:
  virtual MaskPrediction predict_unchecked(const TokenizedSentence& sentence,
                                           std::size_t position,
                                           std::size_t top_k) const = 0;
};

/// Lookup-table backend. Each masked context (see `masked_context`) maps to
/// an explicit distribution; unknown contexts use the default distribution,
/// which is uniform over the vocabulary unless given.
class TableMlm final : public MlmBackend {
 public:
  using Distribution = std::map<std::string, double>;

  TableMlm(std::vector<std::string> extra_vocabulary,
           std::map<std::string, Distribution> contexts,
           std::optional<Distribution> default_distribution = std::nullopt,
           double unknown_floor = kDefaultUnknownFloor);

  /// JSON document: {"vocab": [...], "default": "uniform" | {word: p},
  /// "contexts": {"i saw _ big rabbit": {"a": 0.9, "the": 0.1}},
  /// "unknown_floor": 1e-8}. Rows are renormalized to sum to one.
  static TableMlm from_json_file(const std::string& path);
  static TableMlm from_json_text(std::string_view text);

  std::size_t vocabulary_size() const override { return vocabulary_.size(); }
  bool in_vocabulary(std::string_view word) const override;
  std::unique_ptr<MlmBackend> clone() const override;

  /// Full distribution over the vocabulary for a masked context.
  std::vector<ScoredWord> distribution(std::string_view context) const;
  const std::vector<std::string>& vocabulary() const { return vocabulary_; }

 protected:
  MaskPrediction predict_unchecked(const TokenizedSentence& sentence,
                                   std::size_t position,
                                   std::size_t top_k) const override;

 private:
  std::vector<std::string> vocabulary_;  // sorted
  std::map<std::string, Distribution> contexts_;
  std::optional<Distribution> default_;
  double unknown_floor_;
};

struct CorpusMlmOptions {
  double add_k = 0.1;
  // Interpolation weights for unigram, left-bigram and right-bigram terms.
  std::array<double, 3> weights = {0.2, 0.4, 0.4};
  double unknown_floor = kDefaultUnknownFloor;
};

/// Corpus-statistics masked model: add-k smoothed unigram interpolated with
/// the bigram conditionals on the left and on the right neighbour.
///
///   P(w | l, r) = a*Pu(w) + b*P(w | left = l) + c*P(w | right = r)
///   Pu(w)       = (c(w) + k) / (N + k|V|)
///   P(w | l)    = (c(l w) + k) / (c(l .) + k|V|)
///   P(w | r)    = (c(w r) + k) / (c(. r) + k|V|)
///
/// Sentence edges use the markers "<s>" and "</s>" as neighbours.
class CorpusMlm final : public MlmBackend {
 public:
  static constexpr std::string_view kBos = "<s>";
  static constexpr std::string_view kEos = "</s>";

  explicit CorpusMlm(std::span<const std::string> sentences,
                     CorpusMlmOptions options = {});
  static CorpusMlm from_file(const std::string& path, CorpusMlmOptions options = {});

  std::size_t vocabulary_size() const override { return vocabulary_.size(); }
  bool in_vocabulary(std::string_view word) const override;
  std::unique_ptr<MlmBackend> clone() const override;

  /// Interpolated probability of `word` between `left` and `right`.
  double probability(std::string_view word, std::string_view left,
                     std::string_view right) const;
  const std::vector<std::string>& vocabulary() const { return vocabulary_; }
  const CorpusMlmOptions& options() const { return options_; }

 protected:
  MaskPrediction predict_unchecked(const TokenizedSentence& sentence,
                                   std::size_t position,
                                   std::size_t top_k) const override;

 private:
  double probability_at(std::size_t word, std::string_view left,
                        std::string_view right) const;

  CorpusMlmOptions options_;
  std::vector<std::string> vocabulary_;  // sorted
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<double> unigram_;
  double total_ = 0.0;
  // context word -> (vocab index -> count), plus marginals
  std::unordered_map<std::string, std::unordered_map<std::size_t, double>> left_;
  std::unordered_map<std::string, double> left_total_;
  std::unordered_map<std::string, std::unordered_map<std::size_t, double>> right_;
  std::unordered_map<std::string, double> right_total_;
};

}  // namespace maskdef
