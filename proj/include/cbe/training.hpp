#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cbe/bottleneck.hpp"
#include "cbe/schema.hpp"

namespace cbe {

/// Which data portions a run trains on: the human-labeled source data D, or
/// the LLM-augmented data D~ (source_aug + unlabeled_aug).
enum class DataSetting { Auto, Source, Augmented };

std::string_view to_string(DataSetting d);
DataSetting parse_data_setting(std::string_view s);

struct TrainConfig {
  Strategy strategy = Strategy::Joint;
  DataSetting data = DataSetting::Auto;
  double gamma = 0.5;   // concept-loss weight in the joint loss
  double tau = 1.0;     // weight of the unlabeled-side mixup loss
  double alpha = 0.2;   // Beta(alpha, alpha) for the mixup weight
  std::optional<double> fixed_lambda;  // pins every mixup weight (ablations, tests)
  double learning_rate = 1e-2;
  std::size_t encoder_epochs = 20;     // encoder + projector stage (and joint / vanilla)
  std::size_t classifier_epochs = 20;  // label-predictor stage of independent / sequential
  std::size_t batch_size = 8;
  std::size_t hidden_dim = 128;  // recurrent backends only; the embedding bag ignores it
  std::size_t embedding_dim = 300;
  std::size_t max_len = kDefaultMaxLen;
  std::uint64_t seed = 0;
  std::size_t patience = 3;  // 0 disables early stopping
  bool freeze_encoder = false;
  bool log_steps = true;

  /// Throws ConfigError on out-of-range values.
  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
/// Fields missing from `j` keep their value from `base`.
TrainConfig config_from_json(const nlohmann::json& j, TrainConfig base = {});
/// Hex SHA-256 of the canonical config JSON.
std::string config_hash(const TrainConfig& c);

struct StepLog {
  std::size_t epoch = 0;
  std::size_t step = 0;
  std::string stage;
  double task = 0.0;
  double concept_loss = 0.0;
  double combined = 0.0;
  // Mixup only: combined == loss_sa + tau * loss_u.
  double loss_sa = 0.0;
  double loss_u = 0.0;
};

struct EpochLog {
  std::size_t epoch = 0;
  std::string stage;
  double task = 0.0;  // mean over steps
  double concept_loss = 0.0;
  double combined = 0.0;
  double loss_sa = 0.0;
  double loss_u = 0.0;
  std::optional<double> dev_task_accuracy;
  std::optional<double> dev_concept_accuracy;
  std::optional<double> dev_concept_ce;
};

struct LossReport {
  std::vector<EpochLog> epochs;
  std::vector<StepLog> steps;
  std::vector<std::size_t> lambda_hist = std::vector<std::size_t>(10, 0);  // 10 bins over [0.5, 1]
  std::vector<std::string> warnings;
  double wall_seconds = 0.0;

  void record_lambda(double lambda_hat);
};

nlohmann::json to_json(const LossReport& r);

struct TrainResult {
  ConceptModel model;
  LossReport report;
};

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

inline constexpr double kProbFloor = 1e-12;

/// Mean over concepts with a present target of -sum_v t_v log p_jv. Zero when
/// no target is present. Probabilities below kProbFloor at a positive target
/// coordinate are clamped; `clamped` (if given) counts those events.
double concept_ce(const ConceptActivations& a, std::span<const std::optional<Simplex3>> targets,
                  std::size_t* clamped = nullptr);

/// -sum_c t_c log p_c with the same clamping.
double task_ce(const Vector& probs, const Vector& target);

/// One-hot task target of length m.
Vector one_hot(int label, int m);

/// Scalar stand-in for a gold label: Negative -1, Positive +1, Unknown or absent 0.
double gold_activation(std::optional<ConceptValue> v);

struct LossTerms {
  double task = 0.0;
  double concept_loss = 0.0;
  double combined = 0.0;
  std::size_t clamped = 0;  // concept probabilities floored at kProbFloor
};

struct LossWeights {
  double task = 1.0;
  double concept_loss = 0.5;
};

/// Loss of `model` at latent z: weights.task * task CE + weights.concept_loss *
/// concept CE (vanilla models only have the task term). When `grads` is
/// given, adds `scale` * dLoss/dparam into the projector/head slots of `grads`
/// (laid out as model.parameters()) and writes `scale` * dLoss/dz to `grad_z`.
LossTerms latent_loss(const ConceptModel& model, const Vector& z, std::span<const std::optional<Simplex3>> concepts,
                      const Vector& task_target, const LossWeights& weights, double scale = 1.0,
                      std::vector<Matrix>* grads = nullptr, Vector* grad_z = nullptr);

/// Task CE of the head alone on a given input vector, accumulating into
/// (weight_grad, bias_grad) when given.
double head_loss(const LinearHead& head, const Vector& input, const Vector& task_target, double scale = 1.0,
                 Matrix* weight_grad = nullptr, Matrix* bias_grad = nullptr);

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

/// Adam with bias correction. State is allocated lazily per parameter slot.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  /// Updates params[i] for every i with trainable[i] (all when empty).
  void step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads,
            const std::vector<bool>& trainable = {});

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<Matrix> m_, v_;
};

/// Keeps a copy of the model with the best dev score. Scores compare
/// lexicographically: the primary score (dev accuracy) first, then the
/// tie-break (negated dev loss), both higher-is-better. Epochs without a
/// primary score always replace the copy.
class EarlyStopper {
 public:
  EarlyStopper(const ConceptModel& model, std::size_t patience) : best_(model), patience_(patience) {}

  /// Returns true when `patience` epochs in a row failed to improve.
  bool update(const ConceptModel& model, std::optional<double> score, std::optional<double> tie_break = std::nullopt);
  void restore(ConceptModel& model) const { model = best_; }

 private:
  ConceptModel best_;
  std::optional<double> best_score_;
  std::optional<double> best_tie_;
  std::size_t patience_;
  std::size_t bad_ = 0;
};

/// Per-slot update mask in model.parameters() order.
std::vector<bool> trainable_mask(const ConceptModel& model, bool encoder, bool projector, bool head);

// ---------------------------------------------------------------------------
// Data preparation
// ---------------------------------------------------------------------------

/// An example with its encoder input and targets resolved against a schema.
struct PreparedRow {
  const Example* example = nullptr;
  EncoderInput input;
  std::vector<std::optional<Simplex3>> concepts;
  std::vector<std::optional<ConceptValue>> values;
  int label = 0;
};

std::vector<PreparedRow> prepare_rows(const TextEncoder& encoder, const ConceptSchema& schema,
                                      std::span<const Example* const> rows, int num_classes);

/// Train/dev rows and schema selected by the data setting.
struct TrainingData {
  ConceptSchema schema;
  int num_classes = 2;
  DataSetting setting = DataSetting::Source;
  std::vector<const Example*> train_source;  // source (D_s) or source_aug (D~_sa)
  std::vector<const Example*> train_unlabeled;  // empty for D; unlabeled_aug (D~_u) for D~
  std::vector<const Example*> dev;

  std::vector<const Example*> train_all() const;
};

TrainingData select_training_data(const DatasetBundle& bundle, const TrainConfig& config);

/// Fresh model for the config: embedding bag over the training vocabulary
/// (or `encoder` when given), bottleneck unless the strategy is vanilla.
ConceptModel initial_model(const TrainingData& data, const TrainConfig& config,
                           std::unique_ptr<TextEncoder> encoder = nullptr);

// ---------------------------------------------------------------------------
// Strategies
// ---------------------------------------------------------------------------

/// Task-only training of (encoder, head on z). Concept labels are ignored.
TrainResult train_vanilla(const DatasetBundle& bundle, const TrainConfig& config);
/// Stage 1 fits (encoder, projector) on concepts; stage 2 fits the head on
/// gold concepts mapped to {-1, +1, 0}.
TrainResult train_independent(const DatasetBundle& bundle, const TrainConfig& config);
/// As independent, but stage 2 reads the projector's activations.
TrainResult train_sequential(const DatasetBundle& bundle, const TrainConfig& config);
/// One stage minimizing task CE + gamma * concept CE.
TrainResult train_joint(const DatasetBundle& bundle, const TrainConfig& config);
/// Dispatches on config.strategy (joint_mixup included).
TrainResult train(const DatasetBundle& bundle, const TrainConfig& config);

// Stage-level entry points (used by the strategies above and by tests that
// start from a given model).

/// Minimizes the task CE (vanilla) or the joint loss over train rows.
/// `weights.concept_loss` = 0 gives a task-only bottleneck model.
void fit_end_to_end(ConceptModel& model, const TrainingData& data, const TrainConfig& config,
                    const LossWeights& weights, const std::string& stage, LossReport& report);
/// Stage 1 of independent/sequential: concept CE over (encoder, projector).
void fit_concept_stage(ConceptModel& model, const TrainingData& data, const TrainConfig& config, LossReport& report);
/// Stage 2 on gold concept activations. Only the head changes.
void fit_head_on_gold(ConceptModel& model, const TrainingData& data, const TrainConfig& config, LossReport& report);
/// Stage 2 on the (frozen) projector's activations. Only the head changes.
void fit_head_on_activations(ConceptModel& model, const TrainingData& data, const TrainConfig& config,
                             LossReport& report);

/// Dev task accuracy and mean concept accuracy over labeled entries, with
/// the mean losses used to break accuracy ties.
struct DevScores {
  std::optional<double> task_accuracy;
  std::optional<double> task_ce;
  std::optional<double> concept_accuracy;
  std::optional<double> concept_ce;
};
DevScores score_rows(const ConceptModel& model, std::span<const PreparedRow> rows);
/// Negated weighted dev loss, the early-stopping tie-break.
std::optional<double> dev_tie_break(const DevScores& s, const LossWeights& weights);

}  // namespace cbe
