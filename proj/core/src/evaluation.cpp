#include "maskdef/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "maskdef/errors.hpp"

namespace maskdef {

std::optional<std::size_t> Classifier::label_index(std::string_view name) const {
  const auto& l = labels();
  auto it = std::find(l.begin(), l.end(), name);
  if (it == l.end()) return std::nullopt;
  return static_cast<std::size_t>(it - l.begin());
}

// ---------------------------------------------------------------------------
// KeywordClassifier

KeywordClassifier::KeywordClassifier(std::vector<std::string> labels, std::vector<double> bias,
                                     std::map<std::string, std::vector<double>> weights)
    : labels_(std::move(labels)), bias_(std::move(bias)) {
  if (labels_.empty()) throw DataError("keyword classifier needs at least one label");
  if (bias_.empty()) bias_.assign(labels_.size(), 0.0);
  if (bias_.size() != labels_.size()) throw DataError("keyword classifier: bias/label count mismatch");
  for (auto& [word, w] : weights) {
    if (w.size() != labels_.size()) {
      throw DataError(fmt::format("keyword classifier: weights for '{}' have wrong arity", word));
    }
    auto& slot = weights_[fold_case(word)];
    if (slot.empty()) slot.assign(labels_.size(), 0.0);
    for (std::size_t c = 0; c < w.size(); ++c) slot[c] += w[c];
  }
}

KeywordClassifier KeywordClassifier::parse(std::istream& in, const std::string& source) {
  std::vector<std::string> labels;
  std::vector<double> bias;
  std::vector<std::tuple<std::string, std::string, double, std::size_t>> entries;
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& msg) {
    return DataError(fmt::format("{}:{}: {}", source, line_no, msg));
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    std::string head;
    if (!(fields >> head)) continue;
    if (head == "labels") {
      for (std::string l; fields >> l;) labels.push_back(l);
    } else if (head == "bias") {
      for (std::string v; fields >> v;) {
        try {
          bias.push_back(std::stod(v));
        } catch (const std::exception&) {
          throw fail(fmt::format("bad bias value '{}'", v));
        }
      }
    } else {
      std::string label;
      std::string value;
      std::string extra;
      if (!(fields >> label >> value) || (fields >> extra)) {
        throw fail("expected '<word> <label> <weight>'");
      }
      double w = 0.0;
      try {
        w = std::stod(value);
      } catch (const std::exception&) {
        throw fail(fmt::format("bad weight '{}'", value));
      }
      entries.emplace_back(head, label, w, line_no);
    }
  }
  if (labels.empty()) throw DataError(fmt::format("{}: missing 'labels' directive", source));
  std::map<std::string, std::vector<double>> weights;
  for (auto& [word, label, w, at] : entries) {
    auto it = std::find(labels.begin(), labels.end(), label);
    if (it == labels.end()) {
      throw DataError(fmt::format("{}:{}: unknown label '{}'", source, at, label));
    }
    auto& slot = weights[fold_case(word)];
    if (slot.empty()) slot.assign(labels.size(), 0.0);
    slot[static_cast<std::size_t>(it - labels.begin())] += w;
  }
  return KeywordClassifier(std::move(labels), std::move(bias), std::move(weights));
}

KeywordClassifier KeywordClassifier::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("cannot open classifier config '{}'", path));
  return parse(in, path);
}

ClassPrediction KeywordClassifier::predict(std::string_view text) const {
  std::vector<double> score = bias_;
  for (const auto& w : tokenize(text).words) {
    auto it = weights_.find(fold_case(w));
    if (it == weights_.end()) continue;
    for (std::size_t c = 0; c < score.size(); ++c) score[c] += it->second[c];
  }
  ClassPrediction p;
  const double zmax = *std::max_element(score.begin(), score.end());
  double sum = 0.0;
  p.probabilities.resize(score.size());
  for (std::size_t c = 0; c < score.size(); ++c) {
    p.probabilities[c] = std::exp(score[c] - zmax);
    sum += p.probabilities[c];
  }
  for (auto& v : p.probabilities) v /= sum;
  for (std::size_t c = 1; c < score.size(); ++c) {
    if (score[c] > score[p.label]) p.label = c;
  }
  return p;
}

// ---------------------------------------------------------------------------
// Sentence similarity

std::optional<std::vector<double>> MeanEmbeddingEncoder::encode(std::string_view text) const {
  std::vector<double> sum(store_->dim(), 0.0);
  std::size_t hits = 0;
  for (const auto& w : tokenize(text).words) {
    auto idx = store_->index_of(w);
    if (!idx) continue;
    auto row = store_->row(*idx);
    for (std::size_t d = 0; d < row.size(); ++d) sum[d] += row[d];
    ++hits;
  }
  if (hits == 0) return std::nullopt;
  for (auto& v : sum) v /= static_cast<double>(hits);
  return sum;
}

std::optional<double> sentence_similarity(std::string_view a, std::string_view b,
                                          const SentenceEncoder& encoder) {
  auto ea = encoder.encode(a);
  auto eb = encoder.encode(b);
  if (!ea || !eb || ea->size() != eb->size()) return std::nullopt;
  double dot = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t d = 0; d < ea->size(); ++d) {
    dot += (*ea)[d] * (*eb)[d];
    na += (*ea)[d] * (*ea)[d];
    nb += (*eb)[d] * (*eb)[d];
  }
  if (!(na > 0.0) || !(nb > 0.0)) return std::nullopt;
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

std::optional<double> sentence_similarity(std::string_view a, std::string_view b,
                                          const EmbeddingStore& store) {
  return sentence_similarity(a, b, MeanEmbeddingEncoder(store));
}

// ---------------------------------------------------------------------------
// Corpus I/O

std::vector<CorpusRecord> read_corpus(std::istream& in) {
  std::vector<CorpusRecord> out;
  std::set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    CorpusRecord r;
    try {
      auto doc = nlohmann::json::parse(line);
      if (!doc.is_object()) throw DataError("record is not an object");
      const auto& id = doc.at("id");
      r.id = id.is_string() ? id.get<std::string>() : id.dump();
      r.original_text = doc.at("original").get<std::string>();
      if (doc.contains("adversarial") && !doc.at("adversarial").is_null()) {
        r.adversarial_text = doc.at("adversarial").get<std::string>();
      }
      const auto& label = doc.at("label");
      r.gold_label = label.is_string() ? label.get<std::string>() : label.dump();
      const std::string kind = doc.value("kind", r.adversarial_text ? "attacked" : "clean");
      if (kind == "clean") {
        r.kind = RecordKind::kClean;
      } else if (kind == "attacked") {
        r.kind = RecordKind::kAttacked;
      } else {
        throw DataError(fmt::format("unknown kind '{}'", kind));
      }
    } catch (const nlohmann::json::exception& e) {
      throw DataError(fmt::format("corpus line {}: {}", line_no, e.what()));
    } catch (const DataError& e) {
      throw DataError(fmt::format("corpus line {}: {}", line_no, e.what()));
    }
    if (!ids.insert(r.id).second) {
      throw DataError(fmt::format("corpus line {}: duplicate id '{}'", line_no, r.id));
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<CorpusRecord> read_corpus_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("cannot open corpus '{}'", path));
  try {
    return read_corpus(in);
  } catch (const DataError& e) {
    throw DataError(fmt::format("{}: {}", path, e.what()));
  }
}

void write_corpus(const std::vector<CorpusRecord>& corpus, std::ostream& out) {
  for (const auto& r : corpus) {
    nlohmann::ordered_json doc;
    doc["id"] = r.id;
    doc["original"] = r.original_text;
    if (r.adversarial_text) doc["adversarial"] = *r.adversarial_text;
    doc["label"] = r.gold_label;
    doc["kind"] = r.kind == RecordKind::kClean ? "clean" : "attacked";
    out << doc.dump() << '\n';
  }
}

// ---------------------------------------------------------------------------
// evaluate

namespace {

std::size_t gold_index(const Classifier& classifier, const CorpusRecord& r) {
  auto idx = classifier.label_index(r.gold_label);
  if (!idx) {
    throw DataError(fmt::format("record '{}': label '{}' is not a classifier label", r.id,
                                r.gold_label));
  }
  return *idx;
}

struct Mean {
  double sum = 0.0;
  std::size_t n = 0;
  void add(double v) {
    sum += v;
    ++n;
  }
  std::optional<double> value() const {
    if (n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
  }
};

std::optional<double> ratio(std::size_t num, std::size_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

EvalResult evaluate(const std::vector<CorpusRecord>& corpus, const DefenseFn& defense,
                    const Classifier& classifier, const SentenceEncoder& encoder) {
  if (corpus.empty()) throw InvalidArgument("evaluation corpus is empty");
  EvalResult result;
  EvalReport& rep = result.report;
  Mean sim_adv;
  Mean sim_orig;
  Mean sim_clean;
  Mean loss_ok;
  Mean loss_bad;
  const auto& names = classifier.labels();

  for (const auto& r : corpus) {
    RecordResult rr;
    rr.id = r.id;
    rr.kind = r.kind;
    const std::size_t gold = gold_index(classifier, r);
    const auto clean = classifier.predict(r.original_text);
    rr.pred_clean = names[clean.label];

    if (r.kind == RecordKind::kClean) {
      ++rep.clean_total;
      if (clean.label == gold) {
        rr.eligible = true;
        ++rep.clean_eligible;
        const auto outcome = defense(tokenize(r.original_text));
        rr.defended_text = detokenize(outcome);
        rr.replacements = outcome.replacements;
        rr.pred_def = names[classifier.predict(rr.defended_text).label];
        rr.success = *rr.pred_def == r.gold_label;
        if (rr.success) ++rep.clean_retained;
        rr.similarity = sentence_similarity(rr.defended_text, r.original_text, encoder);
        rr.similarity_to_original = rr.similarity;
        if (rr.similarity) sim_clean.add(*rr.similarity);
      }
    } else {
      ++rep.attacked_total;
      if (!r.adversarial_text) {
        rr.skipped = true;
        ++rep.skipped_missing_adversarial;
        result.records.push_back(std::move(rr));
        continue;
      }
      const auto adv = classifier.predict(*r.adversarial_text);
      rr.pred_adv = names[adv.label];
      rr.adv_loss = -std::log(std::max(adv.probabilities[gold], 1e-300));
      if (clean.label == gold && adv.label != gold) {
        rr.eligible = true;
        ++rep.attacked_eligible;
        const auto outcome = defense(tokenize(*r.adversarial_text));
        rr.defended_text = detokenize(outcome);
        rr.replacements = outcome.replacements;
        rr.pred_def = names[classifier.predict(rr.defended_text).label];
        rr.success = *rr.pred_def == r.gold_label;
        if (rr.success) {
          ++rep.reversed;
          loss_ok.add(*rr.adv_loss);
        } else {
          loss_bad.add(*rr.adv_loss);
        }
        rr.similarity = sentence_similarity(rr.defended_text, *r.adversarial_text, encoder);
        rr.similarity_to_original = sentence_similarity(rr.defended_text, r.original_text, encoder);
        if (rr.similarity) sim_adv.add(*rr.similarity);
        if (rr.similarity_to_original) sim_orig.add(*rr.similarity_to_original);
      }
    }
    result.records.push_back(std::move(rr));
  }

  rep.clean_retention = ratio(rep.clean_retained, rep.clean_eligible);
  rep.reversal_rate = ratio(rep.reversed, rep.attacked_eligible);
  rep.mean_similarity = sim_adv.value();
  rep.similarity_count = sim_adv.n;
  rep.mean_similarity_to_original = sim_orig.value();
  rep.mean_similarity_clean = sim_clean.value();
  rep.loss_success = loss_ok.value();
  rep.loss_failure = loss_bad.value();
  rep.loss_success_count = loss_ok.n;
  rep.loss_failure_count = loss_bad.n;
  return result;
}

// ---------------------------------------------------------------------------
// Report writers

namespace {

nlohmann::ordered_json opt(const std::optional<double>& v) {
  if (!v) return nullptr;
  return *v;
}

nlohmann::ordered_json opt(const std::optional<std::string>& v) {
  if (!v) return nullptr;
  return *v;
}

std::string cell(const std::optional<double>& v) {
  return v ? fmt::format("{:.4f}", *v) : std::string("n/a");
}

}  // namespace

void write_report_json(const EvalReport& rep, std::ostream& out,
                       const std::map<std::string, std::string>& header) {
  nlohmann::ordered_json doc;
  for (const auto& [k, v] : header) doc["config"][k] = v;
  doc["clean"] = {{"total", rep.clean_total},
                  {"eligible", rep.clean_eligible},
                  {"retained", rep.clean_retained},
                  {"retention", opt(rep.clean_retention)},
                  {"similarity", opt(rep.mean_similarity_clean)}};
  doc["attacked"] = {{"total", rep.attacked_total},
                     {"eligible", rep.attacked_eligible},
                     {"reversed", rep.reversed},
                     {"skipped_missing_adversarial", rep.skipped_missing_adversarial},
                     {"reversal_rate", opt(rep.reversal_rate)},
                     {"similarity", opt(rep.mean_similarity)},
                     {"similarity_to_original", opt(rep.mean_similarity_to_original)}};
  doc["loss_by_outcome"] = {
      {"success", {{"count", rep.loss_success_count}, {"mean", opt(rep.loss_success)}}},
      {"failure", {{"count", rep.loss_failure_count}, {"mean", opt(rep.loss_failure)}}}};
  out << doc.dump(2) << '\n';
}

void write_report_table(const EvalReport& rep, std::ostream& out,
                        const std::map<std::string, std::string>& header) {
  std::string s;
  auto line = [&]<typename... Args>(fmt::format_string<Args...> f, Args&&... args) {
    fmt::format_to(std::back_inserter(s), f, std::forward<Args>(args)...);
    s.push_back('\n');
  };
  for (const auto& [k, v] : header) line("# {}: {}", k, v);
  line("{:<28} {:>10} {:>10}", "", "Accuracy", "Similarity");
  line("{:<28} {:>10} {:>10}", "Clean", cell(rep.clean_retention), cell(rep.mean_similarity_clean));
  line("{:<28} {:>10} {:>10}", "Attacked", cell(rep.reversal_rate), cell(rep.mean_similarity));
  line("");
  line("{:<28} {:>10} {:>10}", "Average loss before reverse", "Mean", "Count");
  line("{:<28} {:>10} {:>10}", "Success", cell(rep.loss_success), rep.loss_success_count);
  line("{:<28} {:>10} {:>10}", "Failure", cell(rep.loss_failure), rep.loss_failure_count);
  line("");
  line("clean: {}/{} retained of {} records", rep.clean_retained, rep.clean_eligible,
       rep.clean_total);
  line("attacked: {}/{} reversed of {} records ({} skipped without adversarial text)",
       rep.reversed, rep.attacked_eligible, rep.attacked_total, rep.skipped_missing_adversarial);
  line("similarity to original (attacked): {}", cell(rep.mean_similarity_to_original));
  out << s;
}

void write_record_log(const std::vector<RecordResult>& records, std::ostream& out) {
  for (const auto& r : records) {
    nlohmann::ordered_json doc;
    doc["id"] = r.id;
    doc["kind"] = r.kind == RecordKind::kClean ? "clean" : "attacked";
    doc["eligible"] = r.eligible;
    doc["skipped"] = r.skipped;
    doc["success"] = r.success;
    doc["pred_clean"] = opt(r.pred_clean);
    doc["pred_adv"] = opt(r.pred_adv);
    doc["pred_def"] = opt(r.pred_def);
    auto reps = nlohmann::ordered_json::array();
    for (const auto& x : r.replacements) {
      reps.push_back({{"position", x.position},
                      {"original", x.original},
                      {"replacement", x.replacement},
                      {"j", x.importance_rank},
                      {"k", x.candidate_rank},
                      {"similarity", x.similarity}});
    }
    doc["replacements"] = std::move(reps);
    doc["similarity"] = opt(r.similarity);
    doc["similarity_to_original"] = opt(r.similarity_to_original);
    doc["adv_loss"] = opt(r.adv_loss);
    doc["defended"] = nullptr;
    if (r.eligible) doc["defended"] = r.defended_text;
    out << doc.dump() << '\n';
  }
}

// ---------------------------------------------------------------------------
// synthetic_attack

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string splice(const TokenizedSentence& s, std::size_t position, std::string_view with) {
  std::string out = s.original_text;
  const Span span = s.spans[position];
  out.replace(span.begin, span.size(), with);
  return out;
}

// Most distant vocabulary word whose cosine is still >= floor.
std::optional<std::pair<std::size_t, double>> farthest_neighbor(const EmbeddingStore& store,
                                                                std::size_t word, double floor) {
  std::optional<std::pair<std::size_t, double>> best;
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (i == word || !is_single_word(store.word(i))) continue;
    const double c = store.cosine_at(word, i);
    if (c < floor) continue;
    if (!best || c < best->second ||
        (c == best->second && store.word(i) < store.word(best->first))) {
      best = {i, c};
    }
  }
  return best;
}

}  // namespace

AttackResult synthetic_attack(const CorpusRecord& record, const Classifier& classifier,
                              const EmbeddingStore& store, const AttackOptions& options) {
  if (options.budget < 1) throw InvalidArgument("attack budget must be at least 1");
  const std::size_t gold = gold_index(classifier, record);
  if (classifier.predict(record.original_text).label != gold) {
    throw InvalidArgument(fmt::format("record '{}' is misclassified before the attack", record.id));
  }

  AttackResult result;
  TokenizedSentence current = tokenize(record.original_text);
  std::vector<bool> swapped(current.size(), false);

  std::mt19937_64 rng(options.seed ^ fnv1a(record.id));
  std::vector<std::uint64_t> tie_key(current.size());
  for (auto& k : tie_key) k = rng();

  for (std::size_t step = 0; step < options.budget; ++step) {
    const double p_gold = classifier.predict(current.original_text).probabilities[gold];
    std::vector<std::pair<double, std::size_t>> impact;
    for (std::size_t i = 0; i < current.size(); ++i) {
      if (swapped[i]) continue;
      const double p = classifier.predict(splice(current, i, "")).probabilities[gold];
      impact.emplace_back(p_gold - p, i);
    }
    std::sort(impact.begin(), impact.end(), [&](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      if (tie_key[a.second] != tie_key[b.second]) return tie_key[a.second] < tie_key[b.second];
      return a.second < b.second;
    });

    bool did_swap = false;
    for (const auto& [drop, i] : impact) {
      auto idx = store.index_of(current.words[i]);
      if (!idx) continue;
      auto neighbor = farthest_neighbor(store, *idx, options.neighbor_floor);
      if (!neighbor) continue;
      const std::string& repl = store.word(neighbor->first);
      result.swaps.push_back({i, current.words[i], repl, neighbor->second});
      const std::string text = splice(current, i, apply_case(repl, case_pattern(current.words[i])));
      current = tokenize(text);
      swapped.resize(current.size(), false);
      swapped[i] = true;
      did_swap = true;
      break;
    }
    if (!did_swap) break;
    if (classifier.predict(current.original_text).label != gold) {
      result.success = true;
      break;
    }
  }
  result.text = current.original_text;
  return result;
}

}  // namespace maskdef
