#include "maskdef/defense.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "maskdef/errors.hpp"

namespace maskdef {

void DefenseConfig::validate() const {
  if (!std::isfinite(alpha)) throw InvalidArgument("alpha must be finite");
  if (max_positions < 1) throw InvalidArgument("max_positions must be at least 1");
  if (top_k < 1) throw InvalidArgument("top_k must be at least 1");
}

const char* to_string(PositionStatus status) {
  switch (status) {
    case PositionStatus::kReplaced: return "replaced";
    case PositionStatus::kShortWord: return "short-word";
    case PositionStatus::kPredictsOriginal: return "predicts-original";
    case PositionStatus::kNoCandidatePassed: return "no-candidate-passed";
  }
  return "unknown";
}

std::vector<ImportanceEntry> rank_importance(const std::vector<MaskPrediction>& predictions) {
  std::vector<ImportanceEntry> ranking;
  ranking.reserve(predictions.size());
  for (const auto& p : predictions) ranking.push_back({p.position, p.loss});
  std::stable_sort(ranking.begin(), ranking.end(),
                   [](const ImportanceEntry& a, const ImportanceEntry& b) {
                     if (a.loss != b.loss) return a.loss > b.loss;
                     return a.position < b.position;
                   });
  return ranking;
}

std::vector<ImportanceEntry> rank_importance(const TokenizedSentence& sentence,
                                             const MlmBackend& backend) {
  if (sentence.empty()) return {};
  std::vector<std::size_t> positions(sentence.size());
  std::iota(positions.begin(), positions.end(), std::size_t{0});
  return rank_importance(backend.batch_predict(sentence, positions, 1));
}

DefenseOutcome defend(const TokenizedSentence& sentence, const MlmBackend& backend,
                      const EmbeddingStore& store, const SimilarityStats& stats,
                      const DefenseConfig& config) {
  config.validate();
  DefenseOutcome outcome;
  outcome.input = sentence;
  outcome.threshold = SimilarityThreshold(stats, config.alpha).value();

  if (!sentence.empty()) {
    std::vector<std::size_t> positions(sentence.size());
    std::iota(positions.begin(), positions.end(), std::size_t{0});
    outcome.predictions = backend.batch_predict(sentence, positions, config.top_k);
    outcome.importance = rank_importance(outcome.predictions);
  }

  const std::size_t ranks = std::min(config.max_positions, outcome.importance.size());
  for (std::size_t j = 0; outcome.replacements.size() < config.n && j < ranks; ++j) {
    const auto& entry = outcome.importance[j];
    const std::string original = fold_case(sentence.words[entry.position]);
    const auto& candidates = outcome.predictions[entry.position].candidates;
    const std::size_t scan = std::min(config.top_k, candidates.size());
    ++outcome.positions_examined;

    PositionTrace trace;
    trace.position = entry.position;
    trace.importance_rank = j + 1;

    if (original.size() < config.min_word_length) {
      trace.status = PositionStatus::kShortWord;
      outcome.trail.push_back(trace);
      continue;
    }
    const bool predicts_original =
        config.skip_rule == SkipRule::kTopPrediction
            ? scan > 0 && candidates[0].word == original
            : std::any_of(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(scan),
                          [&](const ScoredWord& c) { return c.word == original; });
    if (predicts_original) {
      trace.status = PositionStatus::kPredictsOriginal;
      outcome.trail.push_back(trace);
      continue;
    }

    trace.status = PositionStatus::kNoCandidatePassed;
    for (std::size_t k = 0; k < scan; ++k) {
      const std::string& candidate = candidates[k].word;
      ++trace.candidates_scanned;
      if (candidate == original) {
        ++trace.rejected_same_word;
        continue;
      }
      if (!is_single_word(candidate)) {
        ++trace.rejected_not_a_word;
        continue;
      }
      const auto verdict = is_similar(store, stats, config.alpha, original, candidate);
      if (!verdict) {
        if (verdict.reason == SimilarityReason::kBelowThreshold) {
          ++trace.rejected_below_threshold;
        } else {
          ++trace.rejected_not_in_vocab;
        }
        continue;
      }
      outcome.replacements.push_back({entry.position, sentence.words[entry.position], candidate,
                                      j + 1, k, verdict.cosine, entry.loss});
      trace.status = PositionStatus::kReplaced;
      break;
    }
    outcome.trail.push_back(trace);
  }

  outcome.output = tokenize(detokenize(outcome));
  return outcome;
}

std::string detokenize(const DefenseOutcome& outcome) {
  const auto& in = outcome.input;
  if (outcome.replacements.empty()) return in.original_text;
  std::vector<const Replacement*> order;
  for (const auto& r : outcome.replacements) order.push_back(&r);
  std::sort(order.begin(), order.end(),
            [](const Replacement* a, const Replacement* b) { return a->position < b->position; });
  std::string text;
  text.reserve(in.original_text.size() + 16 * order.size());
  std::size_t cursor = 0;
  for (const Replacement* r : order) {
    const Span span = in.spans.at(r->position);
    text.append(in.original_text, cursor, span.begin - cursor);
    text += apply_case(fold_case(r->replacement), case_pattern(in.words[r->position]));
    cursor = span.end;
  }
  text.append(in.original_text, cursor, std::string::npos);
  return text;
}

}  // namespace maskdef
