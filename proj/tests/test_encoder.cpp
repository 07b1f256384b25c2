#include <gtest/gtest.h>

#include <cmath>

#include "cbe/encoder.hpp"
#include "cbe/error.hpp"
#include "test_util.hpp"

namespace cbe {
namespace {

Vocabulary food_vocab() { return Vocabulary({"<pad>", "<unk>", "<x>", "food", "was", "great"}); }

EmbeddingBagEncoder random_encoder(std::size_t vocab_words, std::size_t dim, std::uint64_t seed) {
  std::vector<std::string> tokens{"<pad>", "<unk>"};
  for (std::size_t i = 0; i < vocab_words; ++i) tokens.push_back("w" + std::to_string(i));
  Rng rng(seed);
  return EmbeddingBagEncoder::random(Vocabulary(tokens), dim, rng);
}

TEST(Tokenize, DirectLookup) {
  EmbeddingBagEncoder enc(food_vocab(), 4);
  EXPECT_EQ(enc.tokenize("food was great"), (std::vector<TokenId>{3, 4, 5}));
  EXPECT_EQ(enc.tokenize("Food, WAS great!"), (std::vector<TokenId>{3, 4, 5}));
  EXPECT_EQ(enc.tokenize("food was awful"), (std::vector<TokenId>{3, 4, kUnkId}));
  EXPECT_TRUE(enc.tokenize("").empty());
}

TEST(Tokenize, TruncatesToMaxLen) {
  EmbeddingBagEncoder enc(food_vocab(), 4, 512);
  std::string text;
  for (int i = 0; i < 600; ++i) text += (i % 2 ? "was " : "food ");
  const auto ids = enc.tokenize(text);
  ASSERT_EQ(ids.size(), 512u);
  for (std::size_t i = 0; i < ids.size(); ++i) EXPECT_EQ(ids[i], i % 2 ? 4 : 3);
}

TEST(Vocabulary, BuildOrdersByFrequencyThenName) {
  const std::vector<std::string> texts{"b a c", "a b", "a"};
  const auto v = Vocabulary::build(texts);
  ASSERT_EQ(v.size(), 5u);
  EXPECT_EQ(v.token(2), "a");
  EXPECT_EQ(v.token(3), "b");
  EXPECT_EQ(v.token(4), "c");
  EXPECT_EQ(v.lookup("zzz"), kUnkId);
}

TEST(Encode, MeanPooling) {
  const auto enc = random_encoder(6, 8, 1);
  const Matrix& E = enc.embeddings();
  // One token: its embedding row exactly.
  EXPECT_EQ(enc.encode("w3"), Vector(E.row(5).transpose()));
  // Two tokens: the midpoint.
  const Vector two = enc.encode("w0 w1");
  for (int c = 0; c < 8; ++c) EXPECT_DOUBLE_EQ(two[c], (E(2, c) + E(3, c)) / 2);
  // Empty text: zero vector.
  EXPECT_TRUE(enc.encode("").isZero(0));
}

TEST(Encode, MatchesBruteForceMeanOnRandomText) {
  const auto enc = random_encoder(10, 8, 2);
  Rng rng(3);
  std::uniform_int_distribution<int> pick(0, 9);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> words;
    std::string text;
    for (int t = 0; t < 5; ++t) {
      words.push_back(pick(rng));
      text += "w" + std::to_string(words.back()) + " ";
    }
    std::vector<double> expect(8, 0.0);
    for (int w : words)
      for (int c = 0; c < 8; ++c) expect[c] += enc.embeddings()(w + 2, c) / 5.0;
    const Vector z = enc.encode(text);
    for (int c = 0; c < 8; ++c) EXPECT_NEAR(z[c], expect[c], 1e-12);
  }
}

TEST(Encode, PureAndOrderInvariant) {
  const auto enc = random_encoder(6, 8, 4);
  const Vector a = enc.encode("w1 w2 w5");
  const Vector b = enc.encode("w1 w2 w5");
  EXPECT_EQ(0, std::memcmp(a.data(), b.data(), sizeof(double) * 8));
  const Vector c = enc.encode("w5 w1 w2");
  EXPECT_TRUE(a.isApprox(c, 1e-15));
}

TEST(EncodeBatch, ElementwiseEqualToEncode) {
  const auto enc = random_encoder(10, 8, 5);
  std::vector<std::string> texts;
  Rng rng(6);
  std::uniform_int_distribution<int> pick(0, 9), len(0, 6);
  for (int i = 0; i < 8; ++i) {
    std::string t;
    for (int n = len(rng); n > 0; --n) t += "w" + std::to_string(pick(rng)) + " ";
    texts.push_back(t);
  }
  const auto batch = enc.encode_batch(texts);
  ASSERT_EQ(batch.size(), texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i) EXPECT_EQ(batch[i], enc.encode(texts[i]));
  const auto one = enc.encode_batch(std::span(texts).first(1));
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0], enc.encode(texts[0]));
}

TEST(Encode, GradientMatchesFiniteDifferences) {
  // Scalar function f(z) = sum_c w_c * z_c^2 + sin(z_0); check df/dE.
  auto enc = random_encoder(8, 16, 7);
  const std::string text = "w0 w3 w3 w7 w2 w1 w6 w5";
  Rng rng(8);
  Vector w(16);
  for (int c = 0; c < 16; ++c) w[c] = std::uniform_real_distribution<double>(-1, 1)(rng);
  auto f = [&](const Vector& z) { return (w.array() * z.array().square()).sum() + std::sin(z[0]); };

  const EncoderInput in = enc.prepare(text);
  const Vector z = enc.encode_prepared(in);
  Vector gz = 2.0 * w.cwiseProduct(z);
  gz[0] += std::cos(z[0]);
  std::vector<Matrix> grads{Matrix::Zero(enc.embeddings().rows(), enc.embeddings().cols())};
  enc.backward(in, gz, grads);

  const double h = 1e-6;
  for (Eigen::Index r = 0; r < enc.embeddings().rows(); ++r) {
    for (Eigen::Index c = 0; c < enc.embeddings().cols(); ++c) {
      const double orig = enc.embeddings()(r, c);
      enc.embeddings()(r, c) = orig + h;
      const double fp = f(enc.encode_prepared(in));
      enc.embeddings()(r, c) = orig - h;
      const double fm = f(enc.encode_prepared(in));
      enc.embeddings()(r, c) = orig;
      const double numeric = (fp - fm) / (2 * h);
      const double analytic = grads[0](r, c);
      const double scale = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
      EXPECT_LE(std::abs(numeric - analytic) / scale, 1e-4) << "entry " << r << "," << c;
    }
  }
}

TEST(Persistence, SaveLoadRoundTrip) {
  testing::TempDir dir;
  const auto enc = random_encoder(5, 6, 9);
  save_encoder(enc, dir.path());
  const auto back = load_encoder(dir.path());
  EXPECT_EQ(back->kind(), "embedding_bag");
  EXPECT_EQ(back->dim(), 6u);
  // Tensors are stored as float32.
  const Vector a = enc.encode("w1 w4"), b = back->encode("w1 w4");
  EXPECT_TRUE(a.isApprox(b, 1e-6));
}

TEST(DenseFeatureEncoder, ParsesFeaturesVerbatim) {
  DenseFeatureEncoder enc(3);
  Vector v(3);
  v << 0.25, -1.5, 3.0;
  EXPECT_EQ(enc.encode(DenseFeatureEncoder::format_features(v)), v);
  EXPECT_THROW(enc.encode("1 2"), DimensionError);
  EXPECT_THROW(enc.encode("1 x 2"), ParseError);
}

TEST(EncodeCalls, Counted) {
  const auto enc = random_encoder(3, 4, 10);
  const auto before = enc.encode_calls();
  enc.encode("w0");
  const std::vector<std::string> texts{"w1", "w2"};
  enc.encode_batch(texts);
  EXPECT_EQ(enc.encode_calls(), before + 3);
}

}  // namespace
}  // namespace cbe
