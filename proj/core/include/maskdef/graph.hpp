#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace maskdef {

enum class ModelKind { kMlm, kClassifier, kEncoder };

/// Describes an exported model graph and its sidecar files. Relative paths
/// are resolved against the manifest's directory.
///
/// {
///   "format_version": 1,
///   "kind": "mlm" | "classifier" | "encoder",
///   "graph": "model.onnx",
///   "vocab": "vocab.txt",
///   "mask_token_id": 103,            (mlm only)
///   "labels": ["World", ...],        (classifier only)
///   "output": "logits",              (optional; defaults per kind)
///   "sequence_cap": 512,
///   "lowercase": true,
///   "digests": {"graph": "<sha256 hex>", "vocab": "<sha256 hex>"}
/// }
struct ModelManifest {
  static constexpr int kFormatVersion = 1;

  ModelKind kind = ModelKind::kMlm;
  std::string graph_path;
  std::string vocab_path;
  std::optional<std::int64_t> mask_token_id;
  std::vector<std::string> labels;
  std::string output_name;
  std::size_t sequence_cap = 512;
  bool lowercase = true;
  std::string graph_digest;
  std::string vocab_digest;
};

/// Parses and validates a manifest: referenced files must exist and match
/// their recorded SHA-256 digests. Throws DataError otherwise.
ModelManifest load_manifest(const std::string& path);

std::string sha256_file(const std::string& path);

/// WordPiece vocabulary read from the sidecar file (one token per line,
/// id = line number).
class WordPieceVocab {
 public:
  static WordPieceVocab from_file(const std::string& path);
  explicit WordPieceVocab(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(std::int64_t id) const { return tokens_[static_cast<std::size_t>(id)]; }
  std::optional<std::int64_t> id_of(std::string_view token) const;

  std::int64_t cls_id() const { return cls_; }
  std::int64_t sep_id() const { return sep_; }
  std::int64_t unk_id() const { return unk_; }

  /// Greedy longest-match-first split of one word; apostrophes become their
  /// own pieces. Unsplittable words map to [UNK].
  std::vector<std::int64_t> encode_word(std::string_view word) const;

  /// True for tokens that stand alone as a whole word: no "##" prefix, not a
  /// bracketed special token, and made only of word characters.
  bool is_whole_word(std::int64_t id) const;

 private:
  std::vector<std::int64_t> encode_piece(std::string_view piece) const;

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int64_t> ids_;
  std::int64_t cls_ = 0;
  std::int64_t sep_ = 0;
  std::int64_t unk_ = 0;
};

/// [CLS] + wordpieces of every word in `text` + [SEP], truncated to `cap`.
std::vector<std::int64_t> encode_sequence(const WordPieceVocab& vocab, std::string_view text,
                                          std::size_t cap, bool lowercase);

struct GraphTensor {
  std::vector<std::int64_t> shape;
  std::vector<float> data;
};

/// A feed-forward graph taking `input_ids` and `attention_mask` of shape
/// [1, seq] and producing one named float output.
class InferenceGraph {
 public:
  virtual ~InferenceGraph() = default;
  virtual GraphTensor run(std::span<const std::int64_t> input_ids,
                          std::span<const std::int64_t> attention_mask) const = 0;
};

using GraphFactory = std::function<std::unique_ptr<InferenceGraph>()>;

/// True when the library was built with ONNX Runtime support.
bool onnx_runtime_available();

/// Opens an ONNX file in single-threaded sequential mode and checks the
/// named inputs and output. Throws DataError when the file does not satisfy
/// the contract or ONNX Runtime support is not compiled in.
std::unique_ptr<InferenceGraph> open_onnx_graph(const std::string& path,
                                                const std::string& output_name);

/// Factory that opens the manifest's graph through ONNX Runtime.
GraphFactory onnx_factory(const ModelManifest& manifest);

}  // namespace maskdef
