#include <cmath>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "maskdef/errors.hpp"
#include "maskdef/evaluation.hpp"

namespace maskdef {

GraphClassifier::GraphClassifier(const ModelManifest& manifest, WordPieceVocab vocab,
                                 std::unique_ptr<InferenceGraph> graph)
    : labels_(manifest.labels),
      vocab_(std::move(vocab)),
      graph_(std::move(graph)),
      sequence_cap_(manifest.sequence_cap),
      lowercase_(manifest.lowercase) {
  if (labels_.empty()) throw DataError("classifier manifest has no labels");
}

GraphClassifier GraphClassifier::from_manifest(const std::string& manifest_path) {
  auto m = load_manifest(manifest_path);
  if (m.kind != ModelKind::kClassifier) {
    throw DataError(fmt::format("manifest '{}' does not describe a classifier", manifest_path));
  }
  return GraphClassifier(m, WordPieceVocab::from_file(m.vocab_path),
                         open_onnx_graph(m.graph_path, m.output_name));
}

ClassPrediction GraphClassifier::predict(std::string_view text) const {
  const auto ids = encode_sequence(vocab_, text, sequence_cap_, lowercase_);
  const std::vector<std::int64_t> mask(ids.size(), 1);
  const auto out = graph_->run(ids, mask);
  const std::size_t c = labels_.size();
  if (out.data.size() != c || out.shape.empty() || out.shape.back() != static_cast<std::int64_t>(c)) {
    throw DataError(fmt::format("classifier output has shape [{}], expected [1, {}]",
                                fmt::join(out.shape, ", "), c));
  }
  ClassPrediction p;
  p.probabilities.resize(c);
  double zmax = out.data[0];
  for (float z : out.data) zmax = std::max(zmax, static_cast<double>(z));
  double sum = 0.0;
  for (std::size_t i = 0; i < c; ++i) {
    p.probabilities[i] = std::exp(out.data[i] - zmax);
    sum += p.probabilities[i];
  }
  for (std::size_t i = 0; i < c; ++i) {
    p.probabilities[i] /= sum;
    if (p.probabilities[i] > p.probabilities[p.label]) p.label = i;
  }
  return p;
}

GraphSentenceEncoder::GraphSentenceEncoder(const ModelManifest& manifest, WordPieceVocab vocab,
                                           std::unique_ptr<InferenceGraph> graph)
    : vocab_(std::move(vocab)),
      graph_(std::move(graph)),
      sequence_cap_(manifest.sequence_cap),
      lowercase_(manifest.lowercase) {}

GraphSentenceEncoder GraphSentenceEncoder::from_manifest(const std::string& manifest_path) {
  auto m = load_manifest(manifest_path);
  if (m.kind != ModelKind::kEncoder) {
    throw DataError(fmt::format("manifest '{}' does not describe an encoder", manifest_path));
  }
  return GraphSentenceEncoder(m, WordPieceVocab::from_file(m.vocab_path),
                              open_onnx_graph(m.graph_path, m.output_name));
}

std::optional<std::vector<double>> GraphSentenceEncoder::encode(std::string_view text) const {
  if (tokenize(text).empty()) return std::nullopt;
  const auto ids = encode_sequence(vocab_, text, sequence_cap_, lowercase_);
  const std::vector<std::int64_t> mask(ids.size(), 1);
  const auto out = graph_->run(ids, mask);
  if (out.shape.size() == 2 && out.shape[0] == 1) {
    return std::vector<double>(out.data.begin(), out.data.end());
  }
  if (out.shape.size() == 3 && out.shape[0] == 1 &&
      out.shape[1] == static_cast<std::int64_t>(ids.size())) {
    const auto dim = static_cast<std::size_t>(out.shape[2]);
    std::vector<double> pooled(dim, 0.0);
    for (std::size_t t = 0; t < ids.size(); ++t) {
      for (std::size_t d = 0; d < dim; ++d) pooled[d] += out.data[t * dim + d];
    }
    for (auto& v : pooled) v /= static_cast<double>(ids.size());
    return pooled;
  }
  throw DataError(fmt::format("encoder output has unsupported shape [{}]",
                              fmt::join(out.shape, ", ")));
}

}  // namespace maskdef
