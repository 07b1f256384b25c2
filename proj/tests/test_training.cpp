#include <gtest/gtest.h>

#include <cmath>

#include "cbe/error.hpp"
#include "cbe/harness.hpp"
#include "cbe/training.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace cbe {
namespace {

using testing::fast_config;
using testing::small_spec;

ConceptActivations uniform_activations(std::size_t k) { return activations_from_logits(Matrix::Zero(k, 3)); }

TEST(ConceptCe, Examples) {
  const auto a = uniform_activations(1);
  const std::vector<std::optional<Simplex3>> one{Simplex3{0, 1, 0}};
  EXPECT_NEAR(concept_ce(a, one), std::log(3.0), 1e-12);

  const auto b = uniform_activations(3);
  const std::vector<std::optional<Simplex3>> none(3);
  EXPECT_EQ(concept_ce(b, none), 0.0);

  ConceptActivations c;
  c.probs = Matrix(1, 3);
  c.probs << 0.5, 0.25, 0.25;
  c.scalar = Vector::Constant(1, -0.25);
  const std::vector<std::optional<Simplex3>> soft{Simplex3{0.7, 0.3, 0}};
  EXPECT_NEAR(concept_ce(c, soft), -(0.7 * std::log(0.5) + 0.3 * std::log(0.25)), 1e-12);
  EXPECT_NEAR(concept_ce(c, soft), 0.9011, 1e-4);
}

TEST(ConceptCe, MasksAbsentAndAveragesPresent) {
  ConceptActivations a;
  a.probs = Matrix(3, 3);
  a.probs << 0.2, 0.5, 0.3, 0.1, 0.1, 0.8, 0.6, 0.3, 0.1;
  a.scalar = Vector::Zero(3);
  const std::vector<std::optional<Simplex3>> t{Simplex3{0, 1, 0}, std::nullopt, Simplex3{1, 0, 0}};
  EXPECT_NEAR(concept_ce(a, t), -(std::log(0.5) + std::log(0.6)) / 2, 1e-12);
}

TEST(ConceptCe, ZeroProbabilityIsClampedAndCounted) {
  ConceptActivations a;
  a.probs = Matrix(1, 3);
  a.probs << 1.0, 0.0, 0.0;
  a.scalar = Vector::Constant(1, -1.0);
  std::size_t clamped = 0;
  const std::vector<std::optional<Simplex3>> t{Simplex3{0, 1, 0}};
  EXPECT_NEAR(concept_ce(a, t, &clamped), -std::log(kProbFloor), 1e-9);
  EXPECT_EQ(clamped, 1u);
}

TEST(TrainConfig, ValidationAndJson) {
  TrainConfig c;
  EXPECT_EQ(c.batch_size, 8u);
  EXPECT_EQ(c.encoder_epochs, 20u);
  EXPECT_EQ(c.classifier_epochs, 20u);
  EXPECT_EQ(c.hidden_dim, 128u);
  EXPECT_DOUBLE_EQ(c.gamma, 0.5);
  EXPECT_DOUBLE_EQ(c.tau, 1.0);
  EXPECT_DOUBLE_EQ(c.alpha, 0.2);
  EXPECT_NO_THROW(c.validate());
  c.gamma = -0.1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.tau = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.alpha = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.strategy = Strategy::Sequential;
  c.seed = 42;
  c.fixed_lambda = 0.6;
  const auto back = config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_EQ(config_hash(back), config_hash(c));
  c.seed = 43;
  EXPECT_NE(config_hash(back), config_hash(c));
}

TEST(TrainJoint, GammaNegativeIsConfigError) {
  const auto bundle = gen_synthetic(small_spec(20, 5, 5));
  auto cfg = fast_config(Strategy::Joint);
  cfg.gamma = -1;
  EXPECT_THROW(train_joint(bundle, cfg), ConfigError);
}

TEST(LatentLoss, BookkeepingMatchesBruteForce) {
  const auto bundle = gen_synthetic(small_spec(20, 5, 5));
  auto cfg = fast_config(Strategy::Joint);
  const auto data = select_training_data(bundle, cfg);
  const auto model = initial_model(data, cfg);
  const auto rows = prepare_rows(model.encoder(), model.schema(), data.train_source, 2);
  for (const auto& r : rows) {
    const Vector z = model.encoder().encode_prepared(r.input);
    const auto t = latent_loss(model, z, r.concepts, one_hot(r.label, 2), LossWeights{1.0, 0.5});
    EXPECT_EQ(t.combined, t.task + 0.5 * t.concept_loss);
    EXPECT_NEAR(t.combined, oracle::brute_loss(model, z, r.concepts, one_hot(r.label, 2), 1.0, 0.5), 1e-12);
  }
}

TEST(TrainJoint, LoggedCombinedIsExactDecomposition) {
  const auto bundle = gen_synthetic(small_spec(64, 16, 16));
  auto cfg = fast_config(Strategy::Joint);
  cfg.encoder_epochs = 2;
  const auto result = train_joint(bundle, cfg);
  ASSERT_FALSE(result.report.steps.empty());
  for (const auto& s : result.report.steps) EXPECT_EQ(s.combined, s.task + 0.5 * s.concept_loss);
  for (const auto& e : result.report.epochs) {
    EXPECT_TRUE(e.dev_task_accuracy.has_value());
    EXPECT_NEAR(e.combined, e.task + 0.5 * e.concept_loss, 1e-12);
  }
}

TEST(TrainJoint, GammaZeroMatchesTaskOnlyBottleneck) {
  // With gamma = 0 the joint loss is the task loss, so a seeded joint run and
  // a task-only run of the same bottleneck model take identical steps.
  const auto bundle = gen_synthetic(small_spec(48, 16, 16));
  auto cfg = fast_config(Strategy::Joint);
  cfg.gamma = 0.0;
  cfg.encoder_epochs = 3;
  const auto joint = train_joint(bundle, cfg);

  const auto data = select_training_data(bundle, cfg);
  auto model = initial_model(data, cfg);
  LossReport report;
  fit_end_to_end(model, data, cfg, LossWeights{1.0, 0.0}, "joint", report);
  const auto a = joint.model.named_parameters();
  const auto b = model.named_parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(*a[i].value, *b[i].value) << a[i].name;
  ASSERT_EQ(joint.report.steps.size(), report.steps.size());
  for (std::size_t i = 0; i < report.steps.size(); ++i) EXPECT_EQ(joint.report.steps[i].task, report.steps[i].task);
}

TEST(Training, DeterministicPerSeed) {
  const auto bundle = gen_synthetic(small_spec(64, 16, 16));
  for (Strategy s : {Strategy::Vanilla, Strategy::Independent, Strategy::Sequential, Strategy::Joint}) {
    auto cfg = fast_config(s, 5);
    cfg.encoder_epochs = cfg.classifier_epochs = 2;
    const auto a = train(bundle, cfg);
    const auto b = train(bundle, cfg);
    const auto pa = a.model.named_parameters(), pb = b.model.named_parameters();
    for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(*pa[i].value, *pb[i].value) << to_string(s);
    EXPECT_EQ(a.model.provenance().config_hash, config_hash(cfg));
  }
}

TEST(Training, ZeroEpochsReturnsInitialModel) {
  const auto bundle = gen_synthetic(small_spec(32, 8, 8));
  for (Strategy s : {Strategy::Vanilla, Strategy::Joint, Strategy::Independent}) {
    auto cfg = fast_config(s);
    cfg.encoder_epochs = cfg.classifier_epochs = 0;
    const auto trained = train(bundle, cfg);
    const auto init = initial_model(select_training_data(bundle, cfg), cfg);
    const auto pa = trained.model.named_parameters(), pb = init.named_parameters();
    for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(*pa[i].value, *pb[i].value) << to_string(s);
  }
}

TEST(Training, SequentialZeroStageTwoEpochsKeepsHeadInit) {
  const auto bundle = gen_synthetic(small_spec(32, 8, 8));
  auto cfg = fast_config(Strategy::Sequential);
  cfg.encoder_epochs = 2;
  cfg.classifier_epochs = 0;
  const auto trained = train(bundle, cfg);
  const auto init = initial_model(select_training_data(bundle, cfg), cfg);
  EXPECT_EQ(trained.model.head().weight, init.head().weight);
  EXPECT_EQ(trained.model.head().bias, init.head().bias);
  EXPECT_NE(trained.model.projector().weight, init.projector().weight);
}

TEST(Training, EmptyTrainingSplitRejected) {
  const auto bundle = gen_synthetic(small_spec(0, 8, 8));
  EXPECT_THROW(train(bundle, fast_config(Strategy::Vanilla)), ValidationError);
}

TEST(TrainVanilla, SeparableSetReachesFullTrainAccuracy) {
  // Oracle: the task is linearly separable in bag-of-words space (y = 1 iff
  // #Positive > #Negative), so a linear head on a trainable bag reaches 1.0.
  const auto bundle = gen_synthetic(small_spec(200, 50, 50));
  auto cfg = fast_config(Strategy::Vanilla);
  cfg.encoder_epochs = 20;
  cfg.patience = 0;
  const auto result = train_vanilla(bundle, cfg);
  EXPECT_FALSE(result.model.interpretable());
  const auto m = evaluate(result.model, bundle.split(Partition::Source, Split::Train));
  EXPECT_DOUBLE_EQ(m.task.accuracy, 1.0);
}

TEST(TrainIndependent, NoiselessSyntheticReachesDevAccuracy) {
  const auto bundle = gen_synthetic(small_spec(400, 100, 100));
  auto cfg = fast_config(Strategy::Independent);
  cfg.encoder_epochs = cfg.classifier_epochs = 15;
  const auto result = train_independent(bundle, cfg);
  const auto m = evaluate(result.model, bundle.split(Partition::Source, Split::Dev));
  EXPECT_GE(m.task.accuracy, 0.95);
}

TEST(TrainIndependent, StageTwoRerunIsDeterministic) {
  const auto bundle = gen_synthetic(small_spec(64, 16, 16));
  auto cfg = fast_config(Strategy::Independent);
  cfg.encoder_epochs = 2;
  const auto data = select_training_data(bundle, cfg);
  auto stage1 = initial_model(data, cfg);
  LossReport r;
  fit_concept_stage(stage1, data, cfg, r);
  auto a = stage1, b = stage1;
  fit_head_on_gold(a, data, cfg, r);
  fit_head_on_gold(b, data, cfg, r);
  EXPECT_EQ(a.head().weight, b.head().weight);
  EXPECT_EQ(a.projector().weight, stage1.projector().weight);
}

TEST(TrainIndependent, SingleConceptWeightSign) {
  // k = 1 and y equals the concept (Positive -> class 1, otherwise class 0).
  SyntheticSpec spec = small_spec(200, 50, 50);
  spec.k = 1;
  const auto bundle = gen_synthetic(spec);
  auto cfg = fast_config(Strategy::Independent);
  const auto result = train_independent(bundle, cfg);
  const Matrix& W = result.model.head().weight;
  EXPECT_GT(W(1, 0), 0.0);
  EXPECT_GT(W(1, 0) - W(0, 0), 1.0);
}

TEST(TrainIndependent, ConceptWithoutLabelsIsNamed) {
  std::array<SplitSet, 4> parts;
  ConceptSchema schema({{"Food", ConceptOrigin::Human}, {"Price", ConceptOrigin::Generated}});
  for (int i = 0; i < 4; ++i)
    parts[0][0].push_back({"r" + std::to_string(i), "food good", i % 2, {{"Food", {ConceptValue::Positive, LabelSource::Human}}}});
  const DatasetBundle bundle("x", schema, 2, parts);
  auto cfg = fast_config(Strategy::Independent);
  cfg.data = DataSetting::Source;
  const auto data = select_training_data(bundle, cfg);
  auto model = initial_model(data, cfg);
  // The source setting trains on human concepts only; force the full schema.
  TrainingData full = data;
  full.schema = schema;
  auto model2 = initial_model(full, cfg);
  LossReport r;
  try {
    fit_concept_stage(model2, full, cfg, r);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("Price"), std::string::npos);
  }
  EXPECT_NO_THROW(fit_concept_stage(model, data, cfg, r));
}

TEST(TrainSequential, AgreesWithIndependentOnPerfectProjector) {
  const auto bundle = gen_synthetic(small_spec(300, 100, 100));
  auto cfg = fast_config(Strategy::Independent);
  cfg.encoder_epochs = 15;
  cfg.classifier_epochs = 15;
  const auto data = select_training_data(bundle, cfg);
  auto stage1 = initial_model(data, cfg);
  LossReport r;
  fit_concept_stage(stage1, data, cfg, r);
  auto ind = stage1, seq = stage1;
  fit_head_on_gold(ind, data, cfg, r);
  fit_head_on_activations(seq, data, cfg, r);
  const auto& test = bundle.split(Partition::Source, Split::Test);
  std::size_t agree = 0;
  for (const auto& ex : test) agree += ind.forward(ex.text).label.label == seq.forward(ex.text).label.label;
  EXPECT_GE(static_cast<double>(agree) / test.size(), 0.99);
}

TEST(TrainJoint, SyntheticBenchmarkDevScores) {
  const auto bundle = gen_synthetic(small_spec(600, 200, 200));
  auto cfg = fast_config(Strategy::Joint);
  cfg.encoder_epochs = 20;
  const auto result = train_joint(bundle, cfg);
  const auto m = evaluate(result.model, bundle.split(Partition::Source, Split::Dev));
  EXPECT_GE(m.task.accuracy, 0.95);
  ASSERT_TRUE(m.concept_mean.has_value());
  EXPECT_GE(m.concept_mean->macro_f1, 0.90);
  // Dev concept CE ends no higher than after the first epoch.
  const auto& epochs = result.report.epochs;
  ASSERT_GE(epochs.size(), 2u);
  double best = *epochs.front().dev_concept_ce;
  for (const auto& e : epochs) best = std::min(best, *e.dev_concept_ce);
  const auto final_dev = prepare_rows(result.model.encoder(), result.model.schema(),
                                      select_training_data(bundle, cfg).dev, 2);
  EXPECT_LE(*score_rows(result.model, final_dev).concept_ce, *epochs.front().dev_concept_ce);
}

TEST(OracleEquivalence, ConceptHeadMatchesLogisticRegression) {
  const std::size_t e = 4, k = 2;
  const auto inst = oracle::oracle_instance(64, e, k, 21);
  auto cfg = fast_config(Strategy::Independent);
  cfg.batch_size = 64;
  cfg.encoder_epochs = 10000;
  cfg.patience = 0;
  cfg.log_steps = false;
  const auto data = select_training_data(inst.bundle, cfg);
  auto model = initial_model(data, cfg, std::make_unique<DenseFeatureEncoder>(e));
  LossReport r;
  fit_concept_stage(model, data, cfg, r);
  for (std::size_t j = 0; j < k; ++j) {
    const auto fit = oracle::fit_multinomial_logreg(inst.X, inst.y[j]);
    const auto ours = oracle::projector_reference_form(model.projector(), j);
    EXPECT_LE((fit - ours).cwiseAbs().maxCoeff(), 1e-3) << "concept " << j << "\n" << fit << "\n" << ours;
    std::size_t agree = 0;
    for (std::size_t i = 0; i < inst.X.size(); ++i) {
      const auto a = model.project(inst.X[i]);
      agree += static_cast<int>(a.predicted(j)) == oracle::logreg_predict(fit, inst.X[i]);
    }
    EXPECT_GE(static_cast<double>(agree) / inst.X.size(), 0.99);
  }
}

TEST(EarlyStopper, TieBreakAndPatience) {
  const auto bundle = gen_synthetic(small_spec(8, 2, 2));
  auto cfg = fast_config(Strategy::Joint);
  auto model = initial_model(select_training_data(bundle, cfg), cfg);
  EarlyStopper stopper(model, 2);
  auto marked = [&](double v) {
    auto m = model;
    m.head().bias(0, 0) = v;
    return m;
  };
  EXPECT_FALSE(stopper.update(marked(1), 0.5, -1.0));
  EXPECT_FALSE(stopper.update(marked(2), 0.5, -0.5));  // same accuracy, lower loss: improves
  EXPECT_FALSE(stopper.update(marked(3), 0.5, -0.7));  // worse tie-break
  EXPECT_TRUE(stopper.update(marked(4), 0.4, 0.0));    // second miss in a row
  ConceptModel out = model;
  stopper.restore(out);
  EXPECT_EQ(out.head().bias(0, 0), 2.0);
}

}  // namespace
}  // namespace cbe
