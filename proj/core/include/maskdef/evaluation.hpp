#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "maskdef/defense.hpp"
#include "maskdef/embeddings.hpp"
#include "maskdef/graph.hpp"

namespace maskdef {

struct ClassPrediction {
  std::size_t label = 0;
  std::vector<double> probabilities;
};

/// The protected model F. Deterministic; probabilities sum to one.
class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual const std::vector<std::string>& labels() const = 0;
  virtual ClassPrediction predict(std::string_view text) const = 0;

  std::optional<std::size_t> label_index(std::string_view name) const;
};

/// Transparent bag-of-words scorer: class score = bias + sum of keyword
/// weights over the (case-folded) words of the text, then softmax. Ties in
/// the arg-max go to the lowest label index.
///
/// Config file, one directive per line, '#' comments:
///   labels negative positive
///   bias 0.1 0
///   great positive 2.0
class KeywordClassifier final : public Classifier {
 public:
  KeywordClassifier(std::vector<std::string> labels, std::vector<double> bias,
                    std::map<std::string, std::vector<double>> weights);
  static KeywordClassifier from_file(const std::string& path);
  static KeywordClassifier parse(std::istream& in, const std::string& source = "<stream>");

  const std::vector<std::string>& labels() const override { return labels_; }
  ClassPrediction predict(std::string_view text) const override;

  const std::map<std::string, std::vector<double>>& weights() const { return weights_; }

 private:
  std::vector<std::string> labels_;
  std::vector<double> bias_;
  std::map<std::string, std::vector<double>> weights_;
};

/// Classifier graph: [CLS] pieces [SEP] in, logits [1, labels] out.
class GraphClassifier final : public Classifier {
 public:
  GraphClassifier(const ModelManifest& manifest, WordPieceVocab vocab,
                  std::unique_ptr<InferenceGraph> graph);
  static GraphClassifier from_manifest(const std::string& manifest_path);

  const std::vector<std::string>& labels() const override { return labels_; }
  ClassPrediction predict(std::string_view text) const override;

 private:
  std::vector<std::string> labels_;
  WordPieceVocab vocab_;
  std::unique_ptr<InferenceGraph> graph_;
  std::size_t sequence_cap_;
  bool lowercase_;
};

/// Sentence encoder used for the similarity column of the report.
class SentenceEncoder {
 public:
  virtual ~SentenceEncoder() = default;
  /// Nullopt when the text has nothing the encoder can represent.
  virtual std::optional<std::vector<double>> encode(std::string_view text) const = 0;
};

/// Mean of the unit word vectors of in-vocabulary words.
class MeanEmbeddingEncoder final : public SentenceEncoder {
 public:
  explicit MeanEmbeddingEncoder(const EmbeddingStore& store) : store_(&store) {}
  explicit MeanEmbeddingEncoder(EmbeddingStore&&) = delete;
  std::optional<std::vector<double>> encode(std::string_view text) const override;

 private:
  const EmbeddingStore* store_;
};

/// Encoder graph producing [1, dim] directly, or [1, seq, dim] which is
/// mean-pooled over the attention mask.
class GraphSentenceEncoder final : public SentenceEncoder {
 public:
  GraphSentenceEncoder(const ModelManifest& manifest, WordPieceVocab vocab,
                       std::unique_ptr<InferenceGraph> graph);
  static GraphSentenceEncoder from_manifest(const std::string& manifest_path);
  std::optional<std::vector<double>> encode(std::string_view text) const override;

 private:
  WordPieceVocab vocab_;
  std::unique_ptr<InferenceGraph> graph_;
  std::size_t sequence_cap_;
  bool lowercase_;
};

std::optional<double> sentence_similarity(std::string_view a, std::string_view b,
                                          const SentenceEncoder& encoder);

/// Default encoder: cosine of the mean word vectors.
std::optional<double> sentence_similarity(std::string_view a, std::string_view b,
                                          const EmbeddingStore& store);

enum class RecordKind { kClean, kAttacked };

struct CorpusRecord {
  std::string id;
  std::string original_text;
  std::optional<std::string> adversarial_text;
  std::string gold_label;
  RecordKind kind = RecordKind::kClean;
};

/// JSON lines: {"id", "original", "adversarial"?, "label", "kind"}. Blank
/// lines and lines starting with '#' are ignored. Duplicate ids are an error.
std::vector<CorpusRecord> read_corpus(std::istream& in);
std::vector<CorpusRecord> read_corpus_file(const std::string& path);
void write_corpus(const std::vector<CorpusRecord>& corpus, std::ostream& out);

struct RecordResult {
  std::string id;
  RecordKind kind = RecordKind::kClean;
  bool skipped = false;   // attacked record without adversarial text
  bool eligible = false;  // counted in its denominator
  bool success = false;   // retained (clean) or reversed (attacked)
  std::optional<std::string> pred_clean;
  std::optional<std::string> pred_adv;
  std::optional<std::string> pred_def;
  std::string defended_text;
  std::vector<Replacement> replacements;
  std::optional<double> similarity;              // S(defended, defense input)
  std::optional<double> similarity_to_original;  // S(defended, original)
  std::optional<double> adv_loss;                // -ln F(X_adv)[gold]
};

struct EvalReport {
  std::size_t clean_total = 0;
  std::size_t clean_eligible = 0;
  std::size_t clean_retained = 0;
  std::size_t attacked_total = 0;
  std::size_t attacked_eligible = 0;
  std::size_t reversed = 0;
  std::size_t skipped_missing_adversarial = 0;

  std::optional<double> clean_retention;
  std::optional<double> reversal_rate;
  std::optional<double> mean_similarity;              // attacked: S(X_def, X_adv)
  std::optional<double> mean_similarity_to_original;  // attacked: S(X_def, X)
  std::optional<double> mean_similarity_clean;        // clean: S(X_def, X)
  std::size_t similarity_count = 0;

  std::optional<double> loss_success;  // mean adv loss where defense reversed
  std::optional<double> loss_failure;
  std::size_t loss_success_count = 0;
  std::size_t loss_failure_count = 0;
};

struct EvalResult {
  EvalReport report;
  std::vector<RecordResult> records;  // input order
};

using DefenseFn = std::function<DefenseOutcome(const TokenizedSentence&)>;

/// Clean records count only when F gets the original right; attacked records
/// count only when F gets the original right and the adversarial text wrong.
/// Throws InvalidArgument for an empty corpus and DataError for labels the
/// classifier does not know.
EvalResult evaluate(const std::vector<CorpusRecord>& corpus, const DefenseFn& defense,
                    const Classifier& classifier, const SentenceEncoder& encoder);

void write_report_json(const EvalReport& report, std::ostream& out,
                       const std::map<std::string, std::string>& header = {});
void write_report_table(const EvalReport& report, std::ostream& out,
                        const std::map<std::string, std::string>& header = {});
void write_record_log(const std::vector<RecordResult>& records, std::ostream& out);

struct AttackOptions {
  std::size_t budget = 3;
  double neighbor_floor = 0.5;
  std::uint64_t seed = 42;
};

struct AttackSwap {
  std::size_t position = 0;
  std::string original;
  std::string replacement;
  double cosine = 0.0;
};

struct AttackResult {
  bool success = false;
  std::string text;  // final perturbed text (also on failure)
  std::vector<AttackSwap> swaps;
};

/// Greedy word-swap attacker used to build desk-scale adversarial corpora.
/// Each step ranks unswapped words by the drop in gold-class probability
/// when the word is deleted (ties in a seeded random order), and swaps the
/// highest-impact word that has a neighbour for its most distant embedding
/// neighbour with cosine >= neighbor_floor. Stops when the label flips.
/// Throws InvalidArgument when budget < 1 or F misclassifies the original.
AttackResult synthetic_attack(const CorpusRecord& record, const Classifier& classifier,
                              const EmbeddingStore& store, const AttackOptions& options);

}  // namespace maskdef
