#pragma once

#include <memory>
#include <string>

#include "maskdef/graph.hpp"
#include "maskdef/mlm.hpp"

namespace maskdef {

/// Masked-word predictor on top of an exported transformer graph.
///
/// All wordpieces of the target word collapse into one mask token. The loss
/// is the mean over the true word's pieces of -ln p(piece) at that mask, and
/// candidates are restricted to vocabulary tokens that are whole words.
/// Sentences longer than the sequence cap are scored inside a window of the
/// cap length centred on the mask. Graph sessions are not shared between
/// workers; `clone()` opens a fresh one.
class GraphMlm final : public MlmBackend {
 public:
  GraphMlm(const ModelManifest& manifest, WordPieceVocab vocab, GraphFactory factory,
           double unknown_floor = kDefaultUnknownFloor);

  /// Manifest + ONNX Runtime graph.
  static GraphMlm from_manifest(const std::string& manifest_path);

  std::size_t vocabulary_size() const override { return vocab_->size(); }
  bool in_vocabulary(std::string_view word) const override;
  bool concurrent_safe() const override { return false; }
  std::unique_ptr<MlmBackend> clone() const override;

  const WordPieceVocab& vocab() const { return *vocab_; }

  /// Masks `word_position` in `sentence` and checks that the true word is
  /// among the top `within` candidates.
  bool self_test(const TokenizedSentence& sentence, std::size_t word_position,
                 std::size_t within = 10) const;

 protected:
  MaskPrediction predict_unchecked(const TokenizedSentence& sentence,
                                   std::size_t position,
                                   std::size_t top_k) const override;

 private:
  std::string normalize(std::string_view word) const;

  std::shared_ptr<const WordPieceVocab> vocab_;
  GraphFactory factory_;
  std::unique_ptr<InferenceGraph> graph_;
  std::int64_t mask_id_;
  std::size_t sequence_cap_;
  bool lowercase_;
  double unknown_floor_;
  ModelManifest manifest_;
};

}  // namespace maskdef
