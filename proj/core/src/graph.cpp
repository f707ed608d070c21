#include "maskdef/graph.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "maskdef/errors.hpp"
#include "maskdef/text.hpp"

namespace maskdef {

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open '{}'", path));
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) {
    throw DataError("sha256: digest initialisation failed");
  }
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    EVP_DigestUpdate(ctx.get(), buf, static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md, &len);
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) fmt::format_to(std::back_inserter(hex), "{:02x}", md[i]);
  return hex;
}

namespace {

ModelKind parse_kind(const std::string& s) {
  if (s == "mlm") return ModelKind::kMlm;
  if (s == "classifier") return ModelKind::kClassifier;
  if (s == "encoder") return ModelKind::kEncoder;
  throw DataError(fmt::format("manifest: unknown model kind '{}'", s));
}

std::string default_output(ModelKind kind) {
  switch (kind) {
    case ModelKind::kMlm:
    case ModelKind::kClassifier:
      return "logits";
    case ModelKind::kEncoder:
      return "sentence_embedding";
  }
  return "logits";
}

void check_digest(const std::string& file, const std::string& recorded, const char* what) {
  if (recorded.empty()) throw DataError(fmt::format("manifest: missing digest for {}", what));
  const std::string actual = sha256_file(file);
  if (actual != recorded) {
    throw DataError(fmt::format("manifest: {} digest mismatch for '{}' (recorded {}, actual {})",
                                what, file, recorded, actual));
  }
}

std::size_t count_lines(const std::string& path) {
  std::ifstream in(path);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

}  // namespace

ModelManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("cannot open manifest '{}'", path));
  const auto dir = std::filesystem::path(path).parent_path();
  ModelManifest m;
  try {
    auto doc = nlohmann::json::parse(in);
    const int version = doc.at("format_version").get<int>();
    if (version != ModelManifest::kFormatVersion) {
      throw DataError(fmt::format("manifest: unsupported format_version {}", version));
    }
    m.kind = parse_kind(doc.at("kind").get<std::string>());
    m.graph_path = (dir / doc.at("graph").get<std::string>()).string();
    m.vocab_path = (dir / doc.at("vocab").get<std::string>()).string();
    if (doc.contains("mask_token_id")) m.mask_token_id = doc.at("mask_token_id").get<std::int64_t>();
    if (doc.contains("labels")) m.labels = doc.at("labels").get<std::vector<std::string>>();
    m.output_name = doc.value("output", default_output(m.kind));
    m.sequence_cap = doc.value("sequence_cap", std::size_t{512});
    m.lowercase = doc.value("lowercase", true);
    if (doc.contains("digests")) {
      const auto& d = doc.at("digests");
      m.graph_digest = d.value("graph", "");
      m.vocab_digest = d.value("vocab", "");
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(fmt::format("manifest '{}': {}", path, e.what()));
  }
  for (const auto* f : {&m.graph_path, &m.vocab_path}) {
    if (!std::filesystem::is_regular_file(*f)) {
      throw DataError(fmt::format("manifest '{}': referenced file '{}' does not exist", path, *f));
    }
  }
  check_digest(m.graph_path, m.graph_digest, "graph");
  check_digest(m.vocab_path, m.vocab_digest, "vocab");
  if (m.sequence_cap < 3) throw DataError("manifest: sequence_cap must be at least 3");
  if (m.kind == ModelKind::kMlm) {
    if (!m.mask_token_id) throw DataError("manifest: mlm manifests need mask_token_id");
    const auto vocab_size = count_lines(m.vocab_path);
    if (*m.mask_token_id < 0 || static_cast<std::size_t>(*m.mask_token_id) >= vocab_size) {
      throw DataError(fmt::format("manifest: mask_token_id {} outside vocabulary of {}",
                                  *m.mask_token_id, vocab_size));
    }
  }
  if (m.kind != ModelKind::kEncoder && m.output_name != "logits") {
    throw DataError(fmt::format("manifest '{}': {} graphs must expose an output named logits, not '{}'",
                                path, m.kind == ModelKind::kMlm ? "mlm" : "classifier",
                                m.output_name));
  }
  if (m.kind == ModelKind::kClassifier && m.labels.empty()) {
    throw DataError("manifest: classifier manifests need labels");
  }
  return m;
}

// ---------------------------------------------------------------------------

WordPieceVocab::WordPieceVocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    ids_.emplace(tokens_[i], static_cast<std::int64_t>(i));
  }
  auto require = [&](const char* name) {
    auto id = id_of(name);
    if (!id) throw DataError(fmt::format("vocabulary has no {} token", name));
    return *id;
  };
  cls_ = require("[CLS]");
  sep_ = require("[SEP]");
  unk_ = require("[UNK]");
}

WordPieceVocab WordPieceVocab::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("cannot open vocabulary '{}'", path));
  std::vector<std::string> tokens;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(std::move(line));
  }
  return WordPieceVocab(std::move(tokens));
}

std::optional<std::int64_t> WordPieceVocab::id_of(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::int64_t> WordPieceVocab::encode_piece(std::string_view piece) const {
  constexpr std::size_t kMaxChars = 100;
  if (piece.size() > kMaxChars) return {unk_};
  std::vector<std::int64_t> out;
  std::size_t start = 0;
  while (start < piece.size()) {
    std::size_t end = piece.size();
    std::optional<std::int64_t> found;
    while (start < end) {
      std::string sub(piece.substr(start, end - start));
      if (start > 0) sub.insert(0, "##");
      if (auto id = id_of(sub)) {
        found = id;
        break;
      }
      --end;
    }
    if (!found) return {unk_};
    out.push_back(*found);
    start = end;
  }
  return out;
}

std::vector<std::int64_t> WordPieceVocab::encode_word(std::string_view word) const {
  std::vector<std::int64_t> out;
  std::size_t i = 0;
  while (i < word.size()) {
    if (word[i] == '\'') {
      auto id = id_of("'");
      out.push_back(id ? *id : unk_);
      ++i;
      continue;
    }
    const std::size_t begin = i;
    while (i < word.size() && word[i] != '\'') ++i;
    auto pieces = encode_piece(word.substr(begin, i - begin));
    out.insert(out.end(), pieces.begin(), pieces.end());
  }
  return out;
}

bool WordPieceVocab::is_whole_word(std::int64_t id) const {
  const auto& t = token(id);
  if (t.empty() || t.starts_with("##")) return false;
  if (t.front() == '[' && t.back() == ']') return false;
  if (!is_single_word(t)) return false;
  return std::any_of(t.begin(), t.end(), [](char c) {
    const auto u = static_cast<unsigned char>(c);
    return u >= 0x80 || std::isalnum(u) != 0;
  });
}

std::vector<std::int64_t> encode_sequence(const WordPieceVocab& vocab, std::string_view text,
                                          std::size_t cap, bool lowercase) {
  std::vector<std::int64_t> ids{vocab.cls_id()};
  for (const auto& w : tokenize(text).words) {
    auto pieces = vocab.encode_word(lowercase ? fold_case(w) : w);
    ids.insert(ids.end(), pieces.begin(), pieces.end());
  }
  if (ids.size() > cap - 1) ids.resize(cap - 1);
  ids.push_back(vocab.sep_id());
  return ids;
}

GraphFactory onnx_factory(const ModelManifest& manifest) {
  return [path = manifest.graph_path, output = manifest.output_name] {
    return open_onnx_graph(path, output);
  };
}

}  // namespace maskdef
