#include "maskdef/mlm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "maskdef/errors.hpp"

namespace maskdef {

void sort_candidates(std::vector<ScoredWord>& candidates) {
  std::erase_if(candidates, [](const ScoredWord& c) { return !(c.score > 0.0); });
  std::sort(candidates.begin(), candidates.end(), [](const ScoredWord& a, const ScoredWord& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.word < b.word;
  });
}

namespace {

void check_position(const TokenizedSentence& sentence, std::size_t position,
                    std::size_t top_k) {
  if (position >= sentence.size()) {
    throw InvalidArgument(fmt::format("mask position {} out of range for a {}-word sentence",
                                      position, sentence.size()));
  }
  if (top_k == 0) throw InvalidArgument("top_k must be at least 1");
}

void keep_top(std::vector<ScoredWord>& scored, std::size_t top_k) {
  auto better = [](const ScoredWord& a, const ScoredWord& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.word < b.word;
  };
  std::erase_if(scored, [](const ScoredWord& c) { return !(c.score > 0.0); });
  if (scored.size() > top_k) {
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(top_k),
                      scored.end(), better);
    scored.resize(top_k);
  } else {
    std::sort(scored.begin(), scored.end(), better);
  }
}

}  // namespace

MaskPrediction MlmBackend::predict_masked(const TokenizedSentence& sentence,
                                          std::size_t position,
                                          std::size_t top_k) const {
  check_position(sentence, position, top_k);
  return predict_unchecked(sentence, position, top_k);
}

std::vector<MaskPrediction> MlmBackend::batch_predict(
    const TokenizedSentence& sentence, std::span<const std::size_t> positions,
    std::size_t top_k) const {
  for (std::size_t i = 0; i < positions.size(); ++i) {
    try {
      check_position(sentence, positions[i], top_k);
    } catch (const InvalidArgument& e) {
      throw InvalidArgument(fmt::format("batch entry {}: {}", i, e.what()));
    }
  }
  std::vector<MaskPrediction> out;
  out.reserve(positions.size());
  for (std::size_t p : positions) out.push_back(predict_unchecked(sentence, p, top_k));
  return out;
}

// ---------------------------------------------------------------------------
// TableMlm

namespace {

TableMlm::Distribution normalized(TableMlm::Distribution row, const std::string& where) {
  double sum = 0.0;
  TableMlm::Distribution out;
  for (auto& [word, p] : row) {
    if (!(p >= 0.0) || !std::isfinite(p)) {
      throw DataError(fmt::format("{}: probability for '{}' must be finite and >= 0", where, word));
    }
    out[fold_case(word)] += p;
    sum += p;
  }
  if (!(sum > 0.0)) throw DataError(fmt::format("{}: distribution has zero mass", where));
  for (auto& [word, p] : out) p /= sum;
  return out;
}

}  // namespace

TableMlm::TableMlm(std::vector<std::string> extra_vocabulary,
                   std::map<std::string, Distribution> contexts,
                   std::optional<Distribution> default_distribution,
                   double unknown_floor)
    : unknown_floor_(unknown_floor) {
  if (!(unknown_floor > 0.0 && unknown_floor < 1.0)) {
    throw InvalidArgument("unknown-word floor must lie in (0, 1)");
  }
  std::set<std::string> vocab;
  for (auto& w : extra_vocabulary) vocab.insert(fold_case(w));
  for (auto& [ctx, row] : contexts) {
    auto norm = normalized(std::move(row), fmt::format("context '{}'", ctx));
    for (auto& [w, p] : norm) vocab.insert(w);
    contexts_.emplace(fold_case(ctx), std::move(norm));
  }
  if (default_distribution) {
    default_ = normalized(std::move(*default_distribution), "default distribution");
    for (auto& [w, p] : *default_) vocab.insert(w);
  }
  vocabulary_.assign(vocab.begin(), vocab.end());
  if (vocabulary_.empty()) throw DataError("table MLM has an empty vocabulary");
}

TableMlm TableMlm::from_json_text(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(fmt::format("table MLM: {}", e.what()));
  }
  try {
    std::vector<std::string> vocab;
    if (doc.contains("vocab")) vocab = doc.at("vocab").get<std::vector<std::string>>();
    std::map<std::string, Distribution> contexts;
    if (doc.contains("contexts")) {
      for (auto& [ctx, row] : doc.at("contexts").items()) {
        contexts[ctx] = row.get<Distribution>();
      }
    }
    std::optional<Distribution> def;
    if (doc.contains("default") && !doc.at("default").is_string()) {
      def = doc.at("default").get<Distribution>();
    } else if (doc.contains("default") && doc.at("default").get<std::string>() != "uniform") {
      throw DataError("table MLM: default must be \"uniform\" or an object");
    }
    const double floor = doc.value("unknown_floor", kDefaultUnknownFloor);
    return TableMlm(std::move(vocab), std::move(contexts), std::move(def), floor);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(fmt::format("table MLM: {}", e.what()));
  }
}

TableMlm TableMlm::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("cannot open table MLM file '{}'", path));
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return from_json_text(buf.str());
  } catch (const DataError& e) {
    throw DataError(fmt::format("{}: {}", path, e.what()));
  }
}

bool TableMlm::in_vocabulary(std::string_view word) const {
  return std::binary_search(vocabulary_.begin(), vocabulary_.end(), fold_case(word));
}

std::unique_ptr<MlmBackend> TableMlm::clone() const {
  return std::make_unique<TableMlm>(*this);
}

std::vector<ScoredWord> TableMlm::distribution(std::string_view context) const {
  const Distribution* row = nullptr;
  if (auto it = contexts_.find(std::string(context)); it != contexts_.end()) {
    row = &it->second;
  } else if (default_) {
    row = &*default_;
  }
  std::vector<ScoredWord> out;
  out.reserve(vocabulary_.size());
  const double uniform = 1.0 / static_cast<double>(vocabulary_.size());
  for (const auto& w : vocabulary_) {
    double p = uniform;
    if (row) {
      auto it = row->find(w);
      p = it == row->end() ? 0.0 : it->second;
    }
    out.push_back({w, p});
  }
  return out;
}

MaskPrediction TableMlm::predict_unchecked(const TokenizedSentence& sentence,
                                           std::size_t position,
                                           std::size_t top_k) const {
  auto scored = distribution(masked_context(sentence, position));
  const std::string truth = fold_case(sentence.words[position]);
  double p_true = 0.0;
  for (const auto& s : scored) {
    if (s.word == truth) p_true = s.score;
  }
  MaskPrediction out;
  out.position = position;
  out.loss = -std::log(std::max(p_true, unknown_floor_));
  keep_top(scored, top_k);
  out.candidates = std::move(scored);
  return out;
}

// ---------------------------------------------------------------------------
// CorpusMlm

CorpusMlm::CorpusMlm(std::span<const std::string> sentences, CorpusMlmOptions options)
    : options_(options) {
  if (!(options.add_k > 0.0)) throw InvalidArgument("add-k smoothing constant must be > 0");
  double wsum = 0.0;
  for (double w : options.weights) {
    if (!(w >= 0.0)) throw InvalidArgument("interpolation weights must be >= 0");
    wsum += w;
  }
  if (std::abs(wsum - 1.0) > 1e-9) throw InvalidArgument("interpolation weights must sum to 1");

  std::vector<std::vector<std::string>> tokenized;
  std::set<std::string> vocab;
  for (const auto& line : sentences) {
    auto ts = tokenize(line);
    if (ts.empty()) continue;
    std::vector<std::string> words;
    for (auto& w : ts.words) words.push_back(fold_case(w));
    vocab.insert(words.begin(), words.end());
    tokenized.push_back(std::move(words));
  }
  if (vocab.empty()) throw DataError("corpus MLM training text has no words");
  vocabulary_.assign(vocab.begin(), vocab.end());
  for (std::size_t i = 0; i < vocabulary_.size(); ++i) index_.emplace(vocabulary_[i], i);
  unigram_.assign(vocabulary_.size(), 0.0);

  for (const auto& words : tokenized) {
    for (std::size_t i = 0; i < words.size(); ++i) {
      const std::size_t w = index_.at(words[i]);
      const std::string left = i == 0 ? std::string(kBos) : words[i - 1];
      const std::string right = i + 1 == words.size() ? std::string(kEos) : words[i + 1];
      unigram_[w] += 1.0;
      total_ += 1.0;
      left_[left][w] += 1.0;
      left_total_[left] += 1.0;
      right_[right][w] += 1.0;
      right_total_[right] += 1.0;
    }
  }
}

CorpusMlm CorpusMlm::from_file(const std::string& path, CorpusMlmOptions options) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("cannot open corpus file '{}'", path));
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(std::move(line));
  try {
    return CorpusMlm(lines, options);
  } catch (const DataError& e) {
    throw DataError(fmt::format("{}: {}", path, e.what()));
  }
}

bool CorpusMlm::in_vocabulary(std::string_view word) const {
  return index_.contains(fold_case(word));
}

std::unique_ptr<MlmBackend> CorpusMlm::clone() const {
  return std::make_unique<CorpusMlm>(*this);
}

namespace {

template <typename Map>
const typename Map::mapped_type* find_or_null(const Map& m, std::string_view key) {
  auto it = m.find(std::string(key));
  return it == m.end() ? nullptr : &it->second;
}

}  // namespace

double CorpusMlm::probability_at(std::size_t word, std::string_view left,
                                 std::string_view right) const {
  const double k = options_.add_k;
  const double kv = k * static_cast<double>(vocabulary_.size());
  const double pu = (unigram_[word] + k) / (total_ + kv);

  auto conditional = [&](const auto& counts, const auto& totals, std::string_view ctx) {
    double c = 0.0;
    double t = 0.0;
    if (const auto* row = find_or_null(counts, ctx)) {
      if (auto it = row->find(word); it != row->end()) c = it->second;
      t = *find_or_null(totals, ctx);
    }
    return (c + k) / (t + kv);
  };
  const double pl = conditional(left_, left_total_, left);
  const double pr = conditional(right_, right_total_, right);
  const auto& w = options_.weights;
  return w[0] * pu + w[1] * pl + w[2] * pr;
}

double CorpusMlm::probability(std::string_view word, std::string_view left,
                              std::string_view right) const {
  auto it = index_.find(fold_case(word));
  if (it == index_.end()) return 0.0;
  return probability_at(it->second, fold_case(left), fold_case(right));
}

MaskPrediction CorpusMlm::predict_unchecked(const TokenizedSentence& sentence,
                                            std::size_t position,
                                            std::size_t top_k) const {
  const std::string left =
      position == 0 ? std::string(kBos) : fold_case(sentence.words[position - 1]);
  const std::string right = position + 1 == sentence.size()
                                ? std::string(kEos)
                                : fold_case(sentence.words[position + 1]);
  std::vector<ScoredWord> scored;
  scored.reserve(vocabulary_.size());
  for (std::size_t i = 0; i < vocabulary_.size(); ++i) {
    scored.push_back({vocabulary_[i], probability_at(i, left, right)});
  }
  MaskPrediction out;
  out.position = position;
  auto it = index_.find(fold_case(sentence.words[position]));
  const double p_true = it == index_.end() ? 0.0 : scored[it->second].score;
  out.loss = -std::log(std::max(p_true, options_.unknown_floor));
  keep_top(scored, top_k);
  out.candidates = std::move(scored);
  return out;
}

}  // namespace maskdef
