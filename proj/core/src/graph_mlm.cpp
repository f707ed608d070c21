#include "maskdef/graph_mlm.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "maskdef/errors.hpp"

namespace maskdef {

GraphMlm::GraphMlm(const ModelManifest& manifest, WordPieceVocab vocab, GraphFactory factory,
                   double unknown_floor)
    : vocab_(std::make_shared<const WordPieceVocab>(std::move(vocab))),
      factory_(std::move(factory)),
      graph_(factory_()),
      mask_id_(manifest.mask_token_id.value_or(-1)),
      sequence_cap_(manifest.sequence_cap),
      lowercase_(manifest.lowercase),
      unknown_floor_(unknown_floor),
      manifest_(manifest) {
  if (manifest.kind != ModelKind::kMlm) throw DataError("GraphMlm needs an mlm manifest");
  if (mask_id_ < 0 || static_cast<std::size_t>(mask_id_) >= vocab_->size()) {
    throw DataError(fmt::format("mask_token_id {} outside vocabulary of {}", mask_id_,
                                vocab_->size()));
  }
  if (sequence_cap_ < 3) throw DataError("sequence cap must be at least 3");
}

GraphMlm GraphMlm::from_manifest(const std::string& manifest_path) {
  auto manifest = load_manifest(manifest_path);
  if (manifest.kind != ModelKind::kMlm) {
    throw DataError(fmt::format("manifest '{}' does not describe an mlm", manifest_path));
  }
  auto vocab = WordPieceVocab::from_file(manifest.vocab_path);
  auto factory = onnx_factory(manifest);
  return GraphMlm(manifest, std::move(vocab), std::move(factory));
}

std::string GraphMlm::normalize(std::string_view word) const {
  return lowercase_ ? fold_case(word) : std::string(word);
}

bool GraphMlm::in_vocabulary(std::string_view word) const {
  auto id = vocab_->id_of(normalize(word));
  return id && vocab_->is_whole_word(*id);
}

std::unique_ptr<MlmBackend> GraphMlm::clone() const {
  return std::make_unique<GraphMlm>(manifest_, *vocab_, factory_, unknown_floor_);
}

MaskPrediction GraphMlm::predict_unchecked(const TokenizedSentence& sentence,
                                           std::size_t position,
                                           std::size_t top_k) const {
  // Body tokens with the target word collapsed into one mask.
  std::vector<std::int64_t> body;
  std::size_t mask_at = 0;
  std::vector<std::int64_t> truth;
  for (std::size_t i = 0; i < sentence.size(); ++i) {
    auto pieces = vocab_->encode_word(normalize(sentence.words[i]));
    if (i == position) {
      truth = std::move(pieces);
      mask_at = body.size();
      body.push_back(mask_id_);
    } else {
      body.insert(body.end(), pieces.begin(), pieces.end());
    }
  }

  const std::size_t budget = sequence_cap_ - 2;
  std::size_t start = 0;
  if (body.size() > budget) {
    start = mask_at > budget / 2 ? mask_at - budget / 2 : 0;
    start = std::min(start, body.size() - budget);
  }
  const std::size_t len = std::min(body.size(), budget);

  std::vector<std::int64_t> ids;
  ids.reserve(len + 2);
  ids.push_back(vocab_->cls_id());
  ids.insert(ids.end(), body.begin() + static_cast<std::ptrdiff_t>(start),
             body.begin() + static_cast<std::ptrdiff_t>(start + len));
  ids.push_back(vocab_->sep_id());
  const std::vector<std::int64_t> attention(ids.size(), 1);
  const std::size_t row = 1 + mask_at - start;

  const GraphTensor logits = graph_->run(ids, attention);
  const std::size_t v = vocab_->size();
  if (logits.shape.size() != 3 || logits.shape[0] != 1 ||
      logits.shape[1] != static_cast<std::int64_t>(ids.size()) ||
      logits.shape[2] != static_cast<std::int64_t>(v) ||
      logits.data.size() != ids.size() * v) {
    throw DataError(fmt::format("graph output logits has shape [{}], expected [1, {}, {}]",
                                fmt::join(logits.shape, ", "), ids.size(), v));
  }

  const float* z = logits.data.data() + row * v;
  double zmax = -std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < v; ++t) zmax = std::max(zmax, static_cast<double>(z[t]));
  std::vector<double> prob(v);
  double sum = 0.0;
  for (std::size_t t = 0; t < v; ++t) {
    prob[t] = std::exp(static_cast<double>(z[t]) - zmax);
    sum += prob[t];
  }
  for (auto& p : prob) p /= sum;

  MaskPrediction out;
  out.position = position;
  double loss = 0.0;
  for (std::int64_t piece : truth) {
    const double p = piece == vocab_->unk_id() ? 0.0 : prob[static_cast<std::size_t>(piece)];
    loss += -std::log(std::max(p, unknown_floor_));
  }
  out.loss = truth.empty() ? -std::log(unknown_floor_) : loss / static_cast<double>(truth.size());

  std::vector<ScoredWord> scored;
  for (std::size_t t = 0; t < v; ++t) {
    const auto id = static_cast<std::int64_t>(t);
    if (id == mask_id_ || !vocab_->is_whole_word(id)) continue;
    scored.push_back({vocab_->token(id), prob[t]});
  }
  sort_candidates(scored);
  if (scored.size() > top_k) scored.resize(top_k);
  out.candidates = std::move(scored);
  return out;
}

bool GraphMlm::self_test(const TokenizedSentence& sentence, std::size_t word_position,
                         std::size_t within) const {
  const auto pred = predict_masked(sentence, word_position, within);
  const std::string truth = normalize(sentence.words[word_position]);
  return std::any_of(pred.candidates.begin(), pred.candidates.end(),
                     [&](const ScoredWord& c) { return c.word == truth; });
}

}  // namespace maskdef
