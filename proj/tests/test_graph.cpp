#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "maskdef/errors.hpp"
#include "maskdef/evaluation.hpp"
#include "maskdef/graph.hpp"
#include "maskdef/graph_mlm.hpp"

namespace maskdef {
namespace {

namespace fs = std::filesystem;

const std::vector<std::string> kTokens = {
    "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "the",  "quick", "brown",
    "fox",   "jumps", "over",  "lazy",  "dog",    "##s",  "'",     "run",
    "##ning", "cat",  "don",   "t",     "a",      "1990", "caf\xc3\xa9"};

std::int64_t id(const std::string& t) {
  for (std::size_t i = 0; i < kTokens.size(); ++i) {
    if (kTokens[i] == t) return static_cast<std::int64_t>(i);
  }
  throw std::logic_error("no token " + t);
}

// Emits the same logit row at every position and records its inputs.
struct FakeState {
  std::vector<float> row;
  std::vector<std::vector<std::int64_t>> calls;
  int opened = 0;
  bool bad_shape = false;
};

class FakeGraph final : public InferenceGraph {
 public:
  explicit FakeGraph(std::shared_ptr<FakeState> s) : s_(std::move(s)) {}
  GraphTensor run(std::span<const std::int64_t> ids,
                  std::span<const std::int64_t> mask) const override {
    EXPECT_EQ(ids.size(), mask.size());
    s_->calls.emplace_back(ids.begin(), ids.end());
    GraphTensor t;
    const auto n = static_cast<std::int64_t>(ids.size());
    const auto v = static_cast<std::int64_t>(s_->row.size());
    t.shape = {1, n, s_->bad_shape ? v - 1 : v};
    for (std::int64_t i = 0; i < n; ++i) t.data.insert(t.data.end(), s_->row.begin(), s_->row.end());
    if (s_->bad_shape) t.data.resize(static_cast<std::size_t>(n * (v - 1)));
    return t;
  }

 private:
  std::shared_ptr<FakeState> s_;
};

ModelManifest mlm_manifest(std::size_t cap = 512) {
  ModelManifest m;
  m.kind = ModelKind::kMlm;
  m.mask_token_id = id("[MASK]");
  m.sequence_cap = cap;
  m.output_name = "logits";
  return m;
}

GraphMlm make_mlm(const std::shared_ptr<FakeState>& s, std::size_t cap = 512) {
  return GraphMlm(mlm_manifest(cap), WordPieceVocab(kTokens), [s] {
    ++s->opened;
    return std::make_unique<FakeGraph>(s);
  });
}

std::vector<double> softmax(const std::vector<float>& z) {
  double m = z[0];
  for (float x : z) m = std::max(m, static_cast<double>(x));
  std::vector<double> p;
  double sum = 0.0;
  for (float x : z) {
    p.push_back(std::exp(x - m));
    sum += p.back();
  }
  for (auto& x : p) x /= sum;
  return p;
}

std::shared_ptr<FakeState> state_favoring(std::initializer_list<std::pair<const char*, float>> lifts) {
  auto s = std::make_shared<FakeState>();
  s->row.assign(kTokens.size(), 0.0f);
  for (const auto& [tok, z] : lifts) s->row[static_cast<std::size_t>(id(tok))] = z;
  return s;
}

TEST(WordPiece, EncodeWords) {
  const WordPieceVocab v(kTokens);
  EXPECT_EQ(v.encode_word("running"), (std::vector<std::int64_t>{id("run"), id("##ning")}));
  EXPECT_EQ(v.encode_word("dogs"), (std::vector<std::int64_t>{id("dog"), id("##s")}));
  EXPECT_EQ(v.encode_word("don't"), (std::vector<std::int64_t>{id("don"), id("'"), id("t")}));
  EXPECT_EQ(v.encode_word("zebra"), (std::vector<std::int64_t>{id("[UNK]")}));
  EXPECT_TRUE(v.is_whole_word(id("fox")));
  EXPECT_TRUE(v.is_whole_word(id("caf\xc3\xa9")));
  EXPECT_FALSE(v.is_whole_word(id("##s")));
  EXPECT_FALSE(v.is_whole_word(id("[MASK]")));
  EXPECT_FALSE(v.is_whole_word(id("'")));
  EXPECT_THROW(WordPieceVocab(std::vector<std::string>{"[CLS]", "[SEP]"}), DataError);
}

TEST(WordPiece, EncodeSequenceTruncates) {
  const WordPieceVocab v(kTokens);
  const auto ids = encode_sequence(v, "The quick brown fox", 512, true);
  EXPECT_EQ(ids, (std::vector<std::int64_t>{id("[CLS]"), id("the"), id("quick"), id("brown"),
                                            id("fox"), id("[SEP]")}));
  const auto cut = encode_sequence(v, "The quick brown fox", 4, true);
  EXPECT_EQ(cut, (std::vector<std::int64_t>{id("[CLS]"), id("the"), id("quick"), id("[SEP]")}));
  // Case is preserved when the model is cased, so "The" becomes unknown.
  EXPECT_EQ(encode_sequence(v, "The", 512, false)[1], id("[UNK]"));
}

TEST(GraphMlm, MultiPieceWordCollapsesToOneMask) {
  auto s = state_favoring({{"fox", 3.0f}, {"run", 1.0f}, {"##ning", 0.5f}});
  const auto mlm = make_mlm(s);
  const auto sent = tokenize("the dogs running over");
  const auto p = mlm.predict_masked(sent, 2, 5);
  ASSERT_EQ(s->calls.size(), 1u);
  EXPECT_EQ(s->calls[0], (std::vector<std::int64_t>{id("[CLS]"), id("the"), id("dog"), id("##s"),
                                                    id("[MASK]"), id("over"), id("[SEP]")}));
  const auto prob = softmax(s->row);
  const double expect = 0.5 * (-std::log(prob[static_cast<std::size_t>(id("run"))]) -
                               std::log(prob[static_cast<std::size_t>(id("##ning"))]));
  EXPECT_NEAR(p.loss, expect, 1e-9);
}

TEST(GraphMlm, CandidatesAreWholeWordsInOrder) {
  auto s = state_favoring({{"##ning", 9.0f}, {"[MASK]", 8.0f}, {"'", 7.0f}, {"fox", 3.0f},
                           {"dog", 2.0f}, {"cat", 2.0f}});
  const auto mlm = make_mlm(s);
  const auto p = mlm.predict_masked(tokenize("the lazy dog"), 2, 4);
  ASSERT_EQ(p.candidates.size(), 4u);
  EXPECT_EQ(p.candidates[0].word, "fox");
  EXPECT_EQ(p.candidates[1].word, "cat");  // tie with dog, lexicographic
  EXPECT_EQ(p.candidates[2].word, "dog");
  const auto prob = softmax(s->row);
  EXPECT_NEAR(p.candidates[0].score, prob[static_cast<std::size_t>(id("fox"))], 1e-12);
  EXPECT_NEAR(p.loss, -std::log(prob[static_cast<std::size_t>(id("dog"))]), 1e-9);
  for (const auto& c : p.candidates) EXPECT_TRUE(is_single_word(c.word)) << c.word;
}

TEST(GraphMlm, UnknownWordUsesFloor) {
  auto s = state_favoring({});
  const auto mlm = make_mlm(s);
  const auto p = mlm.predict_masked(tokenize("the zebra"), 1, 3);
  EXPECT_NEAR(p.loss, -std::log(1e-8), 1e-9);
  EXPECT_FALSE(mlm.in_vocabulary("zebra"));
  EXPECT_TRUE(mlm.in_vocabulary("Fox"));
  EXPECT_FALSE(mlm.in_vocabulary("##s"));
}

TEST(GraphMlm, LongSentencesUseCentredWindow) {
  auto s = state_favoring({});
  const auto mlm = make_mlm(s, 8);  // 6 body tokens
  // 12 single-piece words: the quick brown fox jumps over the lazy dog cat a fox
  const auto sent = tokenize("the quick brown fox jumps over the lazy dog cat a fox");
  mlm.predict_masked(sent, 9, 3);
  ASSERT_EQ(s->calls.size(), 1u);
  const auto& ids = s->calls[0];
  EXPECT_EQ(ids, (std::vector<std::int64_t>{id("[CLS]"), id("the"), id("lazy"), id("dog"),
                                            id("[MASK]"), id("a"), id("fox"), id("[SEP]")}));
  mlm.predict_masked(sent, 0, 3);
  EXPECT_EQ(s->calls[1][1], id("[MASK]"));
  EXPECT_EQ(s->calls[1].size(), 8u);
  mlm.predict_masked(sent, 11, 3);
  EXPECT_EQ(s->calls[2][6], id("[MASK]"));
}

TEST(GraphMlm, WrongOutputShapeNamesLogits) {
  auto s = state_favoring({});
  s->bad_shape = true;
  const auto mlm = make_mlm(s);
  try {
    mlm.predict_masked(tokenize("the fox"), 1, 3);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("logits"), std::string::npos) << e.what();
  }
}

TEST(GraphMlm, CloneOpensFreshGraphAndIsDeterministic) {
  auto s = state_favoring({{"fox", 2.0f}});
  const auto mlm = make_mlm(s);
  EXPECT_EQ(s->opened, 1);
  EXPECT_FALSE(mlm.concurrent_safe());
  const auto copy = mlm.clone();
  EXPECT_EQ(s->opened, 2);
  const auto sent = tokenize("the quick brown fox");
  EXPECT_EQ(copy->predict_masked(sent, 3, 5), mlm.predict_masked(sent, 3, 5));
  const std::vector<std::size_t> all{0, 1, 2, 3};
  const auto batch = mlm.batch_predict(sent, all, 5);
  for (std::size_t i = 0; i < all.size(); ++i) EXPECT_EQ(batch[i], mlm.predict_masked(sent, i, 5));
}

TEST(GraphMlm, SelfTest) {
  auto s = state_favoring({{"fox", 5.0f}});
  const auto mlm = make_mlm(s);
  const auto sent = tokenize("the quick brown fox jumps over the lazy dog");
  EXPECT_TRUE(mlm.self_test(sent, 3));
  EXPECT_FALSE(mlm.self_test(sent, 8, 1));
}

TEST(GraphMlm, RejectsBadManifest) {
  auto s = state_favoring({});
  auto m = mlm_manifest();
  m.mask_token_id = 99;
  EXPECT_THROW(GraphMlm(m, WordPieceVocab(kTokens), [s] { return std::make_unique<FakeGraph>(s); }),
               DataError);
  m = mlm_manifest();
  m.kind = ModelKind::kClassifier;
  EXPECT_THROW(GraphMlm(m, WordPieceVocab(kTokens), [s] { return std::make_unique<FakeGraph>(s); }),
               DataError);
}

// --- classifier and encoder graphs --------------------------------------------

class FixedOutput final : public InferenceGraph {
 public:
  explicit FixedOutput(GraphTensor t) : t_(std::move(t)) {}
  GraphTensor run(std::span<const std::int64_t>, std::span<const std::int64_t>) const override {
    return t_;
  }

 private:
  GraphTensor t_;
};

TEST(GraphClassifier, SoftmaxOverLogits) {
  ModelManifest m;
  m.kind = ModelKind::kClassifier;
  m.labels = {"World", "Sports", "Business"};
  const GraphClassifier c(m, WordPieceVocab(kTokens),
                          std::make_unique<FixedOutput>(GraphTensor{{1, 3}, {0.0f, 2.0f, 1.0f}}));
  const auto p = c.predict("the fox");
  EXPECT_EQ(p.label, 1u);
  const auto ref = softmax({0.0f, 2.0f, 1.0f});
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(p.probabilities[i], ref[i], 1e-12);
  EXPECT_EQ(c.label_index("Business"), 2u);

  const GraphClassifier wrong(m, WordPieceVocab(kTokens),
                              std::make_unique<FixedOutput>(GraphTensor{{1, 2}, {0.0f, 2.0f}}));
  EXPECT_THROW(wrong.predict("the fox"), DataError);
}

TEST(GraphSentenceEncoder, PooledAndDirect) {
  ModelManifest m;
  m.kind = ModelKind::kEncoder;
  const GraphSentenceEncoder direct(
      m, WordPieceVocab(kTokens), std::make_unique<FixedOutput>(GraphTensor{{1, 2}, {3.0f, 4.0f}}));
  EXPECT_EQ(*direct.encode("the fox"), (std::vector<double>{3.0, 4.0}));
  EXPECT_FALSE(direct.encode(" ,, ").has_value());
  // "the fox" -> 4 ids; rows averaged.
  const GraphSentenceEncoder pooled(
      m, WordPieceVocab(kTokens),
      std::make_unique<FixedOutput>(GraphTensor{{1, 4, 2}, {0, 0, 2, 2, 4, 0, 2, 2}}));
  EXPECT_EQ(*pooled.encode("the fox"), (std::vector<double>{2.0, 1.0}));
}

// --- manifests ------------------------------------------------------------------

class ManifestFiles : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("maskdef_manifest_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
            "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir_);
    write("model.onnx", "not really a graph");
    std::string vocab;
    for (const auto& t : kTokens) vocab += t + "\n";
    write("vocab.txt", vocab);
    doc_ = {{"format_version", 1},
            {"kind", "mlm"},
            {"graph", "model.onnx"},
            {"vocab", "vocab.txt"},
            {"mask_token_id", 4},
            {"sequence_cap", 128},
            {"digests",
             {{"graph", sha256_file((dir_ / "model.onnx").string())},
              {"vocab", sha256_file((dir_ / "vocab.txt").string())}}}};
  }
  void TearDown() override { fs::remove_all(dir_); }

  void write(const std::string& name, const std::string& body) {
    std::ofstream(dir_ / name, std::ios::binary) << body;
  }
  std::string save() {
    write("manifest.json", doc_.dump(2));
    return (dir_ / "manifest.json").string();
  }
  void expect_error(const std::string& needle) {
    try {
      load_manifest(save());
      FAIL() << "expected failure mentioning " << needle;
    } catch (const DataError& e) {
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
  }

  fs::path dir_;
  nlohmann::json doc_;
};

TEST(Sha256, KnownVectors) {
  const auto p = fs::temp_directory_path() / "maskdef_sha_abc";
  std::ofstream(p, std::ios::binary) << "abc";
  EXPECT_EQ(sha256_file(p.string()),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  std::ofstream(p, std::ios::binary | std::ios::trunc).flush();
  EXPECT_EQ(sha256_file(p.string()),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  fs::remove(p);
}

TEST_F(ManifestFiles, RoundTrip) {
  const auto m = load_manifest(save());
  EXPECT_EQ(m.kind, ModelKind::kMlm);
  EXPECT_EQ(m.mask_token_id, 4);
  EXPECT_EQ(m.output_name, "logits");
  EXPECT_EQ(m.sequence_cap, 128u);
  EXPECT_EQ(m.graph_digest, doc_["digests"]["graph"]);
  EXPECT_EQ(sha256_file(m.vocab_path), m.vocab_digest);
  EXPECT_EQ(fs::path(m.graph_path).filename(), "model.onnx");
  const auto again = load_manifest(save());
  EXPECT_EQ(again.graph_digest, m.graph_digest);
  EXPECT_EQ(again.vocab_digest, m.vocab_digest);
}

TEST_F(ManifestFiles, WrongOutputNameNamesLogits) {
  doc_["output"] = "prediction_scores";
  expect_error("logits");
}

TEST_F(ManifestFiles, TamperedGraph) {
  save();
  write("model.onnx", "something else");
  expect_error("digest mismatch");
}

TEST_F(ManifestFiles, MissingDigest) {
  doc_["digests"].erase("vocab");
  expect_error("missing digest for vocab");
}

TEST_F(ManifestFiles, MissingFile) {
  doc_["graph"] = "absent.onnx";
  expect_error("absent.onnx");
}

TEST_F(ManifestFiles, MaskIdOutsideVocab) {
  doc_["mask_token_id"] = static_cast<int>(kTokens.size());
  expect_error("mask_token_id");
}

TEST_F(ManifestFiles, ClassifierNeedsLabels) {
  doc_["kind"] = "classifier";
  expect_error("labels");
  doc_["labels"] = {"neg", "pos"};
  EXPECT_NO_THROW(load_manifest(save()));
}

TEST_F(ManifestFiles, EncoderDefaultsAndVersion) {
  doc_["kind"] = "encoder";
  EXPECT_EQ(load_manifest(save()).output_name, "sentence_embedding");
  doc_["format_version"] = 2;
  expect_error("format_version");
  doc_ = nlohmann::json::object();
  expect_error("manifest");
}

TEST_F(ManifestFiles, GraphBackendAvailability) {
  const auto path = save();
  if (onnx_runtime_available()) GTEST_SKIP() << "built with ONNX Runtime";
  try {
    GraphMlm::from_manifest(path);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("ONNX Runtime"), std::string::npos) << e.what();
  }
}

}  // namespace
}  // namespace maskdef
