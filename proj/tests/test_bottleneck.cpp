#include <gtest/gtest.h>

#include <cmath>

#include "cbe/bottleneck.hpp"
#include "cbe/error.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace cbe {
namespace {

ConceptSchema schema_k(std::size_t k) {
  std::vector<ConceptSpec> specs;
  for (std::size_t j = 0; j < k; ++j) specs.push_back({"c" + std::to_string(j), ConceptOrigin::Human});
  return ConceptSchema(specs);
}

std::unique_ptr<EmbeddingBagEncoder> small_encoder(std::size_t words, std::size_t e, Rng& rng) {
  std::vector<std::string> tokens{"<pad>", "<unk>"};
  for (std::size_t i = 0; i < words; ++i) tokens.push_back("w" + std::to_string(i));
  return std::make_unique<EmbeddingBagEncoder>(EmbeddingBagEncoder::random(Vocabulary(tokens), e, rng));
}

TEST(Project, ZeroParametersGiveUniform) {
  const auto P = ConceptProjector::zeros(3, 5);
  const auto a = project(P, Vector::Random(5));
  for (std::size_t j = 0; j < 3; ++j) {
    for (int v = 0; v < 3; ++v) EXPECT_DOUBLE_EQ(a.probs(j, v), 1.0 / 3);
    EXPECT_DOUBLE_EQ(a.scalar[j], 0.0);
  }
}

TEST(Project, BiasOnlySoftmax) {
  auto P = ConceptProjector::zeros(2, 3);
  P.bias(3, 0) = 0.0;
  P.bias(4, 0) = 10.0;
  P.bias(5, 0) = -10.0;
  const auto a = project(P, Vector::Zero(3));
  const double denom = 1 + std::exp(10.0) + std::exp(-10.0);
  EXPECT_NEAR(a.probs(1, 0), 1 / denom, 1e-12);
  EXPECT_NEAR(a.probs(1, 1), std::exp(10.0) / denom, 1e-12);
  EXPECT_NEAR(a.probs(1, 0), 4.5e-5, 1e-6);
  EXPECT_NEAR(a.scalar[1], (std::exp(10.0) - 1) / denom, 1e-12);
  EXPECT_NEAR(a.scalar[1], 0.99995, 1e-4);
  EXPECT_EQ(a.predicted(1), ConceptValue::Positive);
}

TEST(Project, MatchesBruteForce) {
  Rng rng(11);
  auto P = ConceptProjector::random(2, 2, rng);
  fill_uniform(P.bias, 1.0, rng);
  const Vector z = Vector::Random(2);
  const auto a = project(P, z);
  for (int j = 0; j < 2; ++j) {
    double l[3], s = 0;
    for (int v = 0; v < 3; ++v) {
      l[v] = P.weight(3 * j + v, 0) * z[0] + P.weight(3 * j + v, 1) * z[1] + P.bias(3 * j + v, 0);
      s += std::exp(l[v]);
    }
    for (int v = 0; v < 3; ++v) EXPECT_NEAR(a.probs(j, v), std::exp(l[v]) / s, 1e-6);
    EXPECT_NEAR(a.scalar[j], (std::exp(l[1]) - std::exp(l[0])) / s, 1e-6);
  }
}

TEST(Project, DimensionMismatchThrows) {
  const auto P = ConceptProjector::zeros(2, 4);
  EXPECT_THROW(project(P, Vector::Zero(3)), DimensionError);
}

TEST(Project, RowsStochasticAndShiftInvariant) {
  Rng rng(12);
  auto P = ConceptProjector::random(4, 6, rng);
  const Vector z = Vector::Random(6);
  const auto a = project(P, z);
  for (std::size_t j = 0; j < 4; ++j) {
    EXPECT_NEAR(a.probs.row(j).sum(), 1.0, 1e-12);
    EXPECT_GE(a.scalar[j], -1.0);
    EXPECT_LE(a.scalar[j], 1.0);
  }
  for (int r = 3; r < 6; ++r) P.bias(r, 0) += 7.5;  // shift all logits of concept 1
  const auto b = project(P, z);
  EXPECT_TRUE(a.probs.isApprox(b.probs, 1e-12));
  EXPECT_NEAR(a.scalar[1], b.scalar[1], 1e-12);
}

TEST(PredictLabel, Examples) {
  auto H = LinearHead::zeros(2, 3);
  H.bias << 0.3, 0.1;
  EXPECT_EQ(predict_label(H, Vector::Random(3)).label, 0);

  auto H2 = LinearHead::zeros(2, 1);
  H2.weight << 2, -2;
  Vector a(1);
  a << 0.5;
  const auto p = predict_label(H2, a);
  EXPECT_DOUBLE_EQ(p.logits[0], 1.0);
  EXPECT_DOUBLE_EQ(p.logits[1], -1.0);
  EXPECT_EQ(p.label, 0);
  EXPECT_NEAR(p.probs.sum(), 1.0, 1e-12);

  Rng rng(13);
  auto H3 = LinearHead::random(3, 4, rng);
  H3.bias << 0.5, -0.25, 1.0;
  const auto q = predict_label(H3, Vector::Zero(4));
  for (int c = 0; c < 3; ++c) EXPECT_EQ(q.logits[c], H3.bias(c, 0));
}

TEST(PredictLabel, TiesGoToLowestIndex) {
  auto H = LinearHead::zeros(3, 2);
  EXPECT_EQ(predict_label(H, Vector::Zero(2)).label, 0);
  H.bias << 0.0, 1.0, 1.0;
  EXPECT_EQ(predict_label(H, Vector::Zero(2)).label, 1);
}

TEST(PredictLabel, AffineInActivations) {
  Rng rng(14);
  auto H = LinearHead::random(3, 4, rng);
  H.bias << 0.2, -0.1, 0.4;
  const Vector a1 = Vector::Random(4), a2 = Vector::Random(4);
  const double lam = 0.7;
  const Vector b = H.bias.col(0);
  const Vector mixed = predict_label(H, Vector(lam * a1 + (1 - lam) * a2)).logits - b;
  const Vector expect = lam * (predict_label(H, a1).logits - b) + (1 - lam) * (predict_label(H, a2).logits - b);
  EXPECT_TRUE(mixed.isApprox(expect, 1e-12));
}

TEST(Forward, DeterministicAndStaged) {
  Rng rng(15);
  auto model = ConceptModel::bottleneck(small_encoder(10, 8, rng), schema_k(3), 2, rng);
  const auto f1 = model.forward("w1 w2 w9");
  const auto f2 = model.forward("w1 w2 w9");
  EXPECT_EQ(f1.label.logits, f2.label.logits);
  EXPECT_EQ(f1.concepts->probs, f2.concepts->probs);
  // Manual composition.
  const Vector z = model.encoder().encode("w1 w2 w9");
  const auto a = project(model.projector(), z);
  const auto y = predict_label(model.head(), a);
  EXPECT_EQ(f1.latent, z);
  EXPECT_TRUE(f1.concepts->probs.isApprox(a.probs, 1e-15));
  EXPECT_TRUE(f1.label.logits.isApprox(y.logits, 1e-15));
}

TEST(Forward, ZeroLatentUsesProjectorBiasesOnly) {
  Rng rng(16);
  auto model = ConceptModel::bottleneck(small_encoder(4, 5, rng), schema_k(2), 2, rng);
  fill_uniform(model.projector().bias, 2.0, rng);
  const auto f = model.forward("");  // empty text encodes to zero
  const auto expect = activations_from_logits(Eigen::Map<const Matrix>(model.projector().bias.data(), 2, 3));
  EXPECT_TRUE(f.concepts->probs.isApprox(expect.probs, 1e-12));
}

TEST(Forward, VanillaHasNoConcepts) {
  Rng rng(17);
  auto model = ConceptModel::vanilla(small_encoder(4, 5, rng), schema_k(2), 3, rng);
  EXPECT_FALSE(model.interpretable());
  const auto f = model.forward("w0");
  EXPECT_FALSE(f.concepts.has_value());
  EXPECT_EQ(f.label.logits.size(), 3);
}

TEST(Gradient, FullModelMatchesFiniteDifferences) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    Rng rng(seed);
    auto model = ConceptModel::bottleneck(small_encoder(6, 8, rng), schema_k(4), 3, rng);
    fill_uniform(model.projector().bias, 0.5, rng);
    fill_uniform(model.head().bias, 0.5, rng);
    const std::vector<std::string> texts{"w0 w1 w2", "w3 w3 w5 w4", "w2"};
    const std::vector<std::vector<std::optional<Simplex3>>> concepts{
        {Simplex3{1, 0, 0}, Simplex3{0, 1, 0}, std::nullopt, Simplex3{0, 0, 1}},
        {Simplex3{0.7, 0.3, 0}, std::nullopt, std::nullopt, std::nullopt},
        {Simplex3{0, 1, 0}, Simplex3{0, 1, 0}, Simplex3{1, 0, 0}, Simplex3{0.5, 0, 0.5}}};
    const std::vector<int> labels{0, 2, 1};
    const auto r = oracle::check_model_gradient(model, texts, concepts, labels, 1.0, 0.5);
    EXPECT_GT(r.entries, 100u);
    EXPECT_LE(r.max_relative_error, 1e-4) << "seed " << seed;
  }
}

TEST(Gradient, VanillaMatchesFiniteDifferences) {
  Rng rng(4);
  auto model = ConceptModel::vanilla(small_encoder(6, 8, rng), schema_k(2), 3, rng);
  const std::vector<std::string> texts{"w0 w1", "w5 w4 w4"};
  const std::vector<std::vector<std::optional<Simplex3>>> concepts(2, {std::nullopt, std::nullopt});
  const auto r = oracle::check_model_gradient(model, texts, concepts, {2, 0}, 1.0, 0.0);
  EXPECT_LE(r.max_relative_error, 1e-4);
}

TEST(ModelPersistence, RoundTrip) {
  testing::TempDir dir;
  Rng rng(18);
  auto model = ConceptModel::bottleneck(small_encoder(5, 4, rng), schema_k(2), 2, rng);
  model.provenance().strategy = Strategy::JointMixup;
  model.provenance().seed = 9;
  save_model(model, dir.path());
  const auto back = load_model(dir.path());
  EXPECT_EQ(back.schema(), model.schema());
  EXPECT_EQ(back.num_classes(), 2);
  EXPECT_EQ(back.provenance().strategy, Strategy::JointMixup);
  EXPECT_EQ(back.provenance().seed, 9u);
  const auto a = model.forward("w1 w3"), b = back.forward("w1 w3");
  EXPECT_TRUE(a.label.logits.isApprox(b.label.logits, 1e-5));
}

TEST(ModelPersistence, CorruptWeightsRejected) {
  testing::TempDir dir;
  Rng rng(19);
  auto model = ConceptModel::bottleneck(small_encoder(5, 4, rng), schema_k(2), 2, rng);
  save_model(model, dir.path());
  std::filesystem::resize_file(dir / "weights.bin", 10);
  EXPECT_THROW(load_model(dir.path()), ParseError);
}

}  // namespace
}  // namespace cbe
