#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "maskdef/embeddings.hpp"
#include "maskdef/mlm.hpp"
#include "maskdef/text.hpp"

namespace maskdef {

/// When a position counts as "the model already predicts the original word".
enum class SkipRule {
  kTopPrediction,   // rank-0 candidate equals the original
  kAnyCandidate,    // original appears anywhere in the scanned candidates
};

struct DefenseConfig {
  double alpha = 2.0;
  std::size_t n = 3;               // replacement budget
  std::size_t max_positions = 50;  // importance ranks examined
  std::size_t top_k = 50;          // candidates scanned per position
  std::size_t min_word_length = 2; // shorter words are never replaced
  SkipRule skip_rule = SkipRule::kTopPrediction;

  /// Throws InvalidArgument for a non-finite alpha or zero budgets.
  void validate() const;
};

struct ImportanceEntry {
  std::size_t position = 0;
  double loss = 0.0;

  friend bool operator==(const ImportanceEntry&, const ImportanceEntry&) = default;
};

struct Replacement {
  std::size_t position = 0;
  std::string original;     // surface form from the input
  std::string replacement;  // case-folded MLM candidate
  std::size_t importance_rank = 0;  // j, 1-based
  std::size_t candidate_rank = 0;   // k, 0-based
  double similarity = 0.0;
  double loss = 0.0;

  friend bool operator==(const Replacement&, const Replacement&) = default;
};

enum class PositionStatus {
  kReplaced,
  kShortWord,
  kPredictsOriginal,
  kNoCandidatePassed,
};

const char* to_string(PositionStatus status);

/// Why each examined position did or did not change.
struct PositionTrace {
  std::size_t position = 0;
  std::size_t importance_rank = 0;
  PositionStatus status = PositionStatus::kNoCandidatePassed;
  std::size_t candidates_scanned = 0;
  std::size_t rejected_not_in_vocab = 0;
  std::size_t rejected_below_threshold = 0;
  std::size_t rejected_same_word = 0;
  std::size_t rejected_not_a_word = 0;

  friend bool operator==(const PositionTrace&, const PositionTrace&) = default;
};

struct DefenseOutcome {
  TokenizedSentence input;
  TokenizedSentence output;
  std::vector<Replacement> replacements;
  std::vector<ImportanceEntry> importance;
  std::vector<MaskPrediction> predictions;  // indexed by position
  std::vector<PositionTrace> trail;
  std::size_t positions_examined = 0;
  double threshold = 0.0;
};

/// Every position sorted by masked loss, highest first; ties by position.
std::vector<ImportanceEntry> rank_importance(const TokenizedSentence& sentence,
                                             const MlmBackend& backend);

/// Same ranking from predictions that are already computed.
std::vector<ImportanceEntry> rank_importance(const std::vector<MaskPrediction>& predictions);

/// Masked-word defense. All masked predictions come from the input sentence
/// and are computed once up front. Positions are visited in importance order;
/// the first candidate passing the similarity filter replaces the word. Stops
/// after `n` replacements or `max_positions` visited ranks.
DefenseOutcome defend(const TokenizedSentence& sentence, const MlmBackend& backend,
                      const EmbeddingStore& store, const SimilarityStats& stats,
                      const DefenseConfig& config);

/// Splices the outcome's replacements into the input text, re-applying the
/// casing pattern of each original word.
std::string detokenize(const DefenseOutcome& outcome);

}  // namespace maskdef
