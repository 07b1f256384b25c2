#include "cbe/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "cbe/error.hpp"
#include "cbe/hash.hpp"

namespace cbe {

using nlohmann::json;

// --- config ----------------------------------------------------------------------

std::string_view to_string(DataSetting d) {
  switch (d) {
    case DataSetting::Auto: return "auto";
    case DataSetting::Source: return "source";
    case DataSetting::Augmented: return "augmented";
  }
  return "auto";
}

DataSetting parse_data_setting(std::string_view s) {
  if (s == "auto") return DataSetting::Auto;
  if (s == "source" || s == "D") return DataSetting::Source;
  if (s == "augmented" || s == "D~") return DataSetting::Augmented;
  throw ConfigError(fmt::format("unknown data setting \"{}\" (auto, source, augmented)", s));
}

void TrainConfig::validate() const {
  if (!(gamma >= 0.0)) throw ConfigError(fmt::format("gamma must be >= 0, got {}", gamma));
  if (!(tau >= 0.0)) throw ConfigError(fmt::format("tau must be >= 0, got {}", tau));
  if (!(alpha > 0.0)) throw ConfigError(fmt::format("alpha must be > 0, got {}", alpha));
  if (fixed_lambda && !(*fixed_lambda >= 0.5 && *fixed_lambda <= 1.0))
    throw ConfigError(fmt::format("fixed_lambda must lie in [0.5, 1], got {}", *fixed_lambda));
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (embedding_dim == 0) throw ConfigError("embedding_dim must be >= 1");
  if (max_len == 0) throw ConfigError("max_len must be >= 1");
}

json to_json(const TrainConfig& c) {
  json j = {{"strategy", to_string(c.strategy)},
            {"data", to_string(c.data)},
            {"gamma", c.gamma},
            {"tau", c.tau},
            {"alpha", c.alpha},
            {"learning_rate", c.learning_rate},
            {"encoder_epochs", c.encoder_epochs},
            {"classifier_epochs", c.classifier_epochs},
            {"batch_size", c.batch_size},
            {"hidden_dim", c.hidden_dim},
            {"embedding_dim", c.embedding_dim},
            {"max_len", c.max_len},
            {"seed", c.seed},
            {"patience", c.patience},
            {"freeze_encoder", c.freeze_encoder},
            {"log_steps", c.log_steps}};
  j["fixed_lambda"] = c.fixed_lambda ? json(*c.fixed_lambda) : json(nullptr);
  return j;
}

TrainConfig config_from_json(const json& j, TrainConfig c) {
  if (!j.is_object()) throw ConfigError("training config must be a JSON object");
  try {
    if (j.contains("strategy")) c.strategy = parse_strategy(j["strategy"].get<std::string>());
    if (j.contains("data")) c.data = parse_data_setting(j["data"].get<std::string>());
    c.gamma = j.value("gamma", c.gamma);
    c.tau = j.value("tau", c.tau);
    c.alpha = j.value("alpha", c.alpha);
    if (j.contains("fixed_lambda"))
      c.fixed_lambda = j["fixed_lambda"].is_null() ? std::nullopt : std::optional<double>(j["fixed_lambda"].get<double>());
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.encoder_epochs = j.value("encoder_epochs", c.encoder_epochs);
    c.classifier_epochs = j.value("classifier_epochs", c.classifier_epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
    c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
    c.max_len = j.value("max_len", c.max_len);
    c.seed = j.value("seed", c.seed);
    c.patience = j.value("patience", c.patience);
    c.freeze_encoder = j.value("freeze_encoder", c.freeze_encoder);
    c.log_steps = j.value("log_steps", c.log_steps);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad training config: ") + e.what());
  }
  return c;
}

std::string config_hash(const TrainConfig& c) { return sha256_hex(to_json(c).dump()); }

// --- report ----------------------------------------------------------------------

void LossReport::record_lambda(double lambda_hat) {
  auto bin = static_cast<std::size_t>((lambda_hat - 0.5) / 0.05);
  ++lambda_hist[std::min<std::size_t>(bin, lambda_hist.size() - 1)];
}

json to_json(const LossReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  json epochs = json::array();
  for (const auto& e : r.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"stage", e.stage},
                      {"task_ce", e.task},
                      {"concept_ce", e.concept_loss},
                      {"combined", e.combined},
                      {"loss_sa", e.loss_sa},
                      {"loss_u", e.loss_u},
                      {"dev_task_accuracy", opt(e.dev_task_accuracy)},
                      {"dev_concept_accuracy", opt(e.dev_concept_accuracy)},
                      {"dev_concept_ce", opt(e.dev_concept_ce)}});
  }
  json steps = json::array();
  for (const auto& s : r.steps) {
    steps.push_back({{"epoch", s.epoch},
                     {"step", s.step},
                     {"stage", s.stage},
                     {"task_ce", s.task},
                     {"concept_ce", s.concept_loss},
                     {"combined", s.combined},
                     {"loss_sa", s.loss_sa},
                     {"loss_u", s.loss_u}});
  }
  return {{"epochs", epochs},
          {"steps", steps},
          {"lambda_hist", r.lambda_hist},
          {"warnings", r.warnings},
          {"wall_seconds", r.wall_seconds}};
}

// --- losses ----------------------------------------------------------------------

double concept_ce(const ConceptActivations& a, std::span<const std::optional<Simplex3>> targets,
                  std::size_t* clamped) {
  if (targets.size() != a.size())
    throw DimensionError(fmt::format("{} concept targets for {} concepts", targets.size(), a.size()));
  double total = 0.0;
  std::size_t present = 0;
  for (std::size_t j = 0; j < targets.size(); ++j) {
    if (!targets[j]) continue;
    ++present;
    for (int v = 0; v < 3; ++v) {
      const double t = (*targets[j])[static_cast<std::size_t>(v)];
      if (t <= 0.0) continue;
      double p = a.probs(static_cast<Eigen::Index>(j), v);
      if (p < kProbFloor) {
        p = kProbFloor;
        if (clamped) ++*clamped;
      }
      total -= t * std::log(p);
    }
  }
  return present ? total / static_cast<double>(present) : 0.0;
}

double task_ce(const Vector& probs, const Vector& target) {
  double total = 0.0;
  for (Eigen::Index c = 0; c < target.size(); ++c) {
    if (target[c] <= 0.0) continue;
    total -= target[c] * std::log(std::max(probs[c], kProbFloor));
  }
  return total;
}

Vector one_hot(int label, int m) {
  Vector v = Vector::Zero(m);
  v[label] = 1.0;
  return v;
}

double gold_activation(std::optional<ConceptValue> v) {
  if (!v) return 0.0;
  switch (*v) {
    case ConceptValue::Negative: return -1.0;
    case ConceptValue::Positive: return 1.0;
    case ConceptValue::Unknown: return 0.0;
  }
  return 0.0;
}

LossTerms latent_loss(const ConceptModel& model, const Vector& z, std::span<const std::optional<Simplex3>> concepts,
                      const Vector& task_target, const LossWeights& weights, double scale,
                      std::vector<Matrix>* grads, Vector* grad_z) {
  const std::size_t n_enc = model.num_encoder_parameters();
  const LinearHead& head = model.head();
  LossTerms terms;

  if (!model.interpretable()) {
    const auto pred = predict_label(head, z);
    terms.task = task_ce(pred.probs, task_target);
    terms.combined = weights.task * terms.task;
    if (grads) {
      const Vector dt = scale * weights.task * (pred.probs * task_target.sum() - task_target);
      (*grads)[n_enc] += dt * z.transpose();
      (*grads)[n_enc + 1].col(0) += dt;
      if (grad_z) *grad_z = head.weight.transpose() * dt;
    }
    return terms;
  }

  const ConceptProjector& proj = model.projector();
  const Matrix logits = concept_logits(proj, z);
  const ConceptActivations a = activations_from_logits(logits);
  const auto pred = predict_label(head, a.scalar);
  terms.task = task_ce(pred.probs, task_target);
  terms.concept_loss = concept_ce(a, concepts, &terms.clamped);
  terms.combined = weights.task * terms.task + weights.concept_loss * terms.concept_loss;
  if (!grads) return terms;

  const auto k = static_cast<Eigen::Index>(a.size());
  Matrix dlogits = Matrix::Zero(k, 3);
  if (weights.task != 0.0) {
    const Vector dt = scale * weights.task * (pred.probs * task_target.sum() - task_target);
    (*grads)[n_enc + 2] += dt * a.scalar.transpose();
    (*grads)[n_enc + 3].col(0) += dt;
    const Vector da = head.weight.transpose() * dt;
    for (Eigen::Index j = 0; j < k; ++j) {
      const double p0 = a.probs(j, 0), p1 = a.probs(j, 1);
      for (int v = 0; v < 3; ++v) {
        const double d = (v == 1 ? p1 : 0.0) - (v == 0 ? p0 : 0.0) - a.probs(j, v) * a.scalar[j];
        dlogits(j, v) += da[j] * d;
      }
    }
  }
  if (weights.concept_loss != 0.0) {
    std::size_t present = 0;
    for (const auto& t : concepts) present += t.has_value();
    if (present) {
      const double c = scale * weights.concept_loss / static_cast<double>(present);
      for (Eigen::Index j = 0; j < k; ++j) {
        const auto& t = concepts[static_cast<std::size_t>(j)];
        if (!t) continue;
        const double tsum = (*t)[0] + (*t)[1] + (*t)[2];
        for (int v = 0; v < 3; ++v) dlogits(j, v) += c * (a.probs(j, v) * tsum - (*t)[static_cast<std::size_t>(v)]);
      }
    }
  }
  const Eigen::Map<const Vector> flat(dlogits.data(), dlogits.size());
  (*grads)[n_enc] += flat * z.transpose();
  (*grads)[n_enc + 1].col(0) += flat;
  if (grad_z) *grad_z = proj.weight.transpose() * flat;
  return terms;
}

double head_loss(const LinearHead& head, const Vector& input, const Vector& task_target, double scale,
                 Matrix* weight_grad, Matrix* bias_grad) {
  const auto pred = predict_label(head, input);
  const double loss = task_ce(pred.probs, task_target);
  if (weight_grad || bias_grad) {
    const Vector dt = scale * (pred.probs * task_target.sum() - task_target);
    if (weight_grad) *weight_grad += dt * input.transpose();
    if (bias_grad) bias_grad->col(0) += dt;
  }
  return loss;
}

// --- optimizer -------------------------------------------------------------------

void Adam::step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads,
                const std::vector<bool>& trainable) {
  if (params.size() != grads.size()) throw DimensionError("parameter/gradient count mismatch");
  if (m_.empty()) {
    for (const Matrix* p : params) {
      m_.push_back(Matrix::Zero(p->rows(), p->cols()));
      v_.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!trainable.empty() && !trainable[i]) continue;
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i].cwiseProduct(grads[i]);
    params[i]->array() -= lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

// --- data ------------------------------------------------------------------------

bool EarlyStopper::update(const ConceptModel& model, std::optional<double> score, std::optional<double> tie_break) {
  if (!score) {
    best_ = model;
    return false;
  }
  const bool better = !best_score_ || *score > *best_score_ ||
                      (*score == *best_score_ && tie_break && (!best_tie_ || *tie_break > *best_tie_));
  if (better) {
    best_score_ = score;
    best_tie_ = tie_break;
    best_ = model;
    bad_ = 0;
    return false;
  }
  ++bad_;
  return patience_ > 0 && bad_ >= patience_;
}

std::vector<bool> trainable_mask(const ConceptModel& model, bool encoder, bool projector, bool head) {
  std::vector<bool> mask(model.num_encoder_parameters(), encoder);
  if (model.interpretable()) mask.insert(mask.end(), 2, projector);
  mask.insert(mask.end(), 2, head);
  return mask;
}

std::vector<PreparedRow> prepare_rows(const TextEncoder& encoder, const ConceptSchema& schema,
                                      std::span<const Example* const> rows, int num_classes) {
  std::vector<PreparedRow> out;
  out.reserve(rows.size());
  for (const Example* ex : rows) {
    PreparedRow r;
    r.example = ex;
    r.input = encoder.prepare(ex->text);
    r.values = concept_values(*ex, schema);
    r.concepts.reserve(r.values.size());
    for (const auto& v : r.values) r.concepts.push_back(encode_concept_target(v));
    if (ex->label < 0 || ex->label >= num_classes) throw ValidationError("label out of range in " + ex->id);
    r.label = ex->label;
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<const Example*> TrainingData::train_all() const {
  auto out = train_source;
  out.insert(out.end(), train_unlabeled.begin(), train_unlabeled.end());
  return out;
}

TrainingData select_training_data(const DatasetBundle& bundle, const TrainConfig& config) {
  TrainingData d;
  d.num_classes = bundle.num_classes();
  const bool has_aug = bundle.has_partition(Partition::SourceAug) || bundle.has_partition(Partition::UnlabeledAug);
  d.setting = config.data;
  if (d.setting == DataSetting::Auto) d.setting = has_aug ? DataSetting::Augmented : DataSetting::Source;
  if (config.strategy == Strategy::JointMixup && d.setting != DataSetting::Augmented)
    throw ConfigError("joint_mixup trains on the augmented data portions");
  auto ptrs = [](const std::vector<Example>& v) {
    std::vector<const Example*> out;
    for (const auto& e : v) out.push_back(&e);
    return out;
  };
  if (d.setting == DataSetting::Source) {
    d.schema = bundle.schema().num_human() ? bundle.schema().human_only() : bundle.schema();
    d.train_source = ptrs(bundle.split(Partition::Source, Split::Train));
    d.dev = ptrs(bundle.split(Partition::Source, Split::Dev));
  } else {
    if (!has_aug) throw ConfigError("dataset has no augmented partitions");
    d.schema = bundle.schema();
    d.train_source = ptrs(bundle.split(Partition::SourceAug, Split::Train));
    d.train_unlabeled = ptrs(bundle.split(Partition::UnlabeledAug, Split::Train));
    d.dev = ptrs(bundle.split(Partition::SourceAug, Split::Dev));
    const auto u_dev = ptrs(bundle.split(Partition::UnlabeledAug, Split::Dev));
    d.dev.insert(d.dev.end(), u_dev.begin(), u_dev.end());
  }
  return d;
}

ConceptModel initial_model(const TrainingData& data, const TrainConfig& config, std::unique_ptr<TextEncoder> encoder) {
  Rng rng(derive_seed(config.seed, "init"));
  if (!encoder) {
    std::vector<std::string> texts;
    for (const Example* ex : data.train_all()) texts.push_back(ex->text);
    auto vocab = Vocabulary::build(texts);
    encoder = std::make_unique<EmbeddingBagEncoder>(
        EmbeddingBagEncoder::random(std::move(vocab), config.embedding_dim, rng, config.max_len));
  }
  ConceptModel model = config.strategy == Strategy::Vanilla
                           ? ConceptModel::vanilla(std::move(encoder), data.schema, data.num_classes, rng)
                           : ConceptModel::bottleneck(std::move(encoder), data.schema, data.num_classes, rng);
  model.provenance().strategy = config.strategy;
  model.provenance().seed = config.seed;
  model.provenance().config_hash = config_hash(config);
  model.provenance().hyperparameters = to_json(config);
  return model;
}

// --- scoring ---------------------------------------------------------------------

DevScores score_rows(const ConceptModel& model, std::span<const PreparedRow> rows) {
  DevScores s;
  if (rows.empty()) return s;
  std::size_t correct = 0, c_correct = 0, c_total = 0;
  double ce_sum = 0.0, task_sum = 0.0;
  for (const auto& r : rows) {
    const auto fw = model.forward_latent(model.encoder().encode_prepared(r.input));
    correct += fw.label.label == r.label;
    task_sum += task_ce(fw.label.probs, one_hot(r.label, model.num_classes()));
    if (fw.concepts) {
      ce_sum += concept_ce(*fw.concepts, r.concepts);
      for (std::size_t j = 0; j < r.values.size(); ++j) {
        if (!r.values[j]) continue;
        ++c_total;
        c_correct += fw.concepts->predicted(j) == *r.values[j];
      }
    }
  }
  s.task_accuracy = static_cast<double>(correct) / static_cast<double>(rows.size());
  s.task_ce = task_sum / static_cast<double>(rows.size());
  if (c_total) {
    s.concept_accuracy = static_cast<double>(c_correct) / static_cast<double>(c_total);
    s.concept_ce = ce_sum / static_cast<double>(rows.size());
  }
  return s;
}

// --- loops -----------------------------------------------------------------------

namespace {

void finish_epoch(EpochLog& log, std::size_t steps) {
  if (steps == 0) return;
  const double n = static_cast<double>(steps);
  log.task /= n;
  log.concept_loss /= n;
  log.combined /= n;
  log.loss_sa /= n;
  log.loss_u /= n;
}

void fit_head(ConceptModel& model, const std::vector<Vector>& inputs, const std::vector<int>& labels,
              std::span<const PreparedRow> dev, const TrainConfig& config, const std::string& stage,
              LossReport& report) {
  if (inputs.empty()) throw ValidationError("empty training split");
  Rng rng(derive_seed(config.seed, stage));
  Adam opt(config.learning_rate);
  const int m = model.num_classes();
  std::vector<std::size_t> order(inputs.size());
  std::iota(order.begin(), order.end(), 0);
  // Dev accuracy only depends on the head here, so the projector output is cached.
  std::vector<Vector> dev_inputs;
  for (const auto& r : dev) dev_inputs.push_back(model.project(model.encoder().encode_prepared(r.input)).scalar);

  EarlyStopper stopper(model, config.patience);
  for (std::size_t epoch = 1; epoch <= config.classifier_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochLog elog;
    elog.epoch = epoch;
    elog.stage = stage;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++steps) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const double scale = 1.0 / static_cast<double>(end - start);
      Matrix gw = Matrix::Zero(model.head().weight.rows(), model.head().weight.cols());
      Matrix gb = Matrix::Zero(model.head().bias.rows(), 1);
      double task = 0.0;
      for (std::size_t i = start; i < end; ++i) {
        const std::size_t r = order[i];
        task += scale * head_loss(model.head(), inputs[r], one_hot(labels[r], m), scale, &gw, &gb);
      }
      if (config.log_steps) report.steps.push_back({epoch, steps, stage, task, 0.0, task});
      elog.task += task;
      elog.combined += task;
      opt.step({&model.head().weight, &model.head().bias}, {gw, gb});
    }
    finish_epoch(elog, steps);
    std::optional<double> dev_acc, dev_loss;
    if (!dev.empty()) {
      std::size_t correct = 0;
      double loss = 0.0;
      for (std::size_t i = 0; i < dev.size(); ++i) {
        const auto pred = predict_label(model.head(), dev_inputs[i]);
        correct += pred.label == dev[i].label;
        loss += task_ce(pred.probs, one_hot(dev[i].label, m));
      }
      dev_acc = static_cast<double>(correct) / static_cast<double>(dev.size());
      dev_loss = -loss / static_cast<double>(dev.size());
    }
    elog.dev_task_accuracy = dev_acc;
    report.epochs.push_back(elog);
    if (stopper.update(model, dev_acc, dev_loss)) break;
  }
  stopper.restore(model);
}

}  // namespace

std::optional<double> dev_tie_break(const DevScores& s, const LossWeights& weights) {
  if (!s.task_ce) return std::nullopt;
  return -(weights.task * *s.task_ce + weights.concept_loss * s.concept_ce.value_or(0.0));
}

void fit_end_to_end(ConceptModel& model, const TrainingData& data, const TrainConfig& config,
                    const LossWeights& weights, const std::string& stage, LossReport& report) {
  const auto train_ptrs = data.train_all();
  if (train_ptrs.empty()) throw ValidationError("empty training split");
  const auto rows = prepare_rows(model.encoder(), model.schema(), train_ptrs, model.num_classes());
  const auto dev = prepare_rows(model.encoder(), model.schema(), data.dev, model.num_classes());
  const bool task_stage = weights.task != 0.0;
  const auto mask = trainable_mask(model, !config.freeze_encoder, true, task_stage);
  const std::size_t n_enc = model.num_encoder_parameters();
  const int m = model.num_classes();

  Rng rng(derive_seed(config.seed, stage));
  Adam opt(config.learning_rate);
  std::vector<std::size_t> order(rows.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t clamped = 0;

  EarlyStopper stopper(model, config.patience);
  for (std::size_t epoch = 1; epoch <= config.encoder_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochLog elog;
    elog.epoch = epoch;
    elog.stage = stage;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++steps) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const double scale = 1.0 / static_cast<double>(end - start);
      auto grads = model.zero_gradients();
      double task = 0.0, concept_loss = 0.0;
      for (std::size_t i = start; i < end; ++i) {
        const PreparedRow& r = rows[order[i]];
        const Vector z = model.encoder().encode_prepared(r.input);
        Vector gz;
        const auto terms = latent_loss(model, z, r.concepts, one_hot(r.label, m), weights, scale, &grads, &gz);
        clamped += terms.clamped;
        if (mask.front() && n_enc) model.encoder().backward(r.input, gz, std::span<Matrix>(grads.data(), n_enc));
        task += scale * terms.task;
        concept_loss += scale * terms.concept_loss;
      }
      const double combined = weights.task * task + weights.concept_loss * concept_loss;
      if (config.log_steps) report.steps.push_back({epoch, steps, stage, task, concept_loss, combined});
      elog.task += task;
      elog.concept_loss += concept_loss;
      elog.combined += combined;
      opt.step(model.parameters(), grads, mask);
    }
    finish_epoch(elog, steps);
    const auto scores = score_rows(model, dev);
    elog.dev_task_accuracy = scores.task_accuracy;
    elog.dev_concept_accuracy = scores.concept_accuracy;
    elog.dev_concept_ce = scores.concept_ce;
    report.epochs.push_back(elog);
    if (stopper.update(model, task_stage ? scores.task_accuracy : scores.concept_accuracy, dev_tie_break(scores, weights)))
      break;
  }
  stopper.restore(model);
  if (clamped) {
    report.warnings.push_back(fmt::format("{}: {} concept probabilities clamped at {}", stage, clamped, kProbFloor));
    spdlog::warn("{}: {} concept probabilities clamped at {}", stage, clamped, kProbFloor);
  }
}

void fit_concept_stage(ConceptModel& model, const TrainingData& data, const TrainConfig& config, LossReport& report) {
  const auto& schema = model.schema();
  const auto train_ptrs = data.train_all();
  for (std::size_t j = 0; j < schema.size(); ++j) {
    const auto& name = schema.at(j).name;
    const bool any = std::any_of(train_ptrs.begin(), train_ptrs.end(),
                                 [&](const Example* ex) { return ex->concepts.count(name) > 0; });
    if (!any) throw ValidationError(fmt::format("concept \"{}\" has no labeled training examples", name));
  }
  fit_end_to_end(model, data, config, LossWeights{0.0, 1.0}, "concept", report);
}

void fit_head_on_gold(ConceptModel& model, const TrainingData& data, const TrainConfig& config, LossReport& report) {
  const auto train_ptrs = data.train_all();
  std::vector<Vector> inputs;
  std::vector<int> labels;
  for (const Example* ex : train_ptrs) {
    const auto values = concept_values(*ex, model.schema());
    Vector in(static_cast<Eigen::Index>(values.size()));
    for (std::size_t j = 0; j < values.size(); ++j) in[static_cast<Eigen::Index>(j)] = gold_activation(values[j]);
    inputs.push_back(std::move(in));
    labels.push_back(ex->label);
  }
  const auto dev = prepare_rows(model.encoder(), model.schema(), data.dev, model.num_classes());
  fit_head(model, inputs, labels, dev, config, "classifier_gold", report);
}

void fit_head_on_activations(ConceptModel& model, const TrainingData& data, const TrainConfig& config,
                             LossReport& report) {
  const auto rows = prepare_rows(model.encoder(), model.schema(), data.train_all(), model.num_classes());
  std::vector<Vector> inputs;
  std::vector<int> labels;
  for (const auto& r : rows) {
    inputs.push_back(model.project(model.encoder().encode_prepared(r.input)).scalar);
    labels.push_back(r.label);
  }
  const auto dev = prepare_rows(model.encoder(), model.schema(), data.dev, model.num_classes());
  fit_head(model, inputs, labels, dev, config, "classifier_activations", report);
}

// --- strategies --------------------------------------------------------------------

namespace {

template <class Fn>
TrainResult run_strategy(const DatasetBundle& bundle, TrainConfig config, Strategy strategy, Fn&& body) {
  config.strategy = strategy;
  config.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const TrainingData data = select_training_data(bundle, config);
  ConceptModel model = initial_model(data, config);
  LossReport report;
  body(model, data, config, report);
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {std::move(model), std::move(report)};
}

}  // namespace

TrainResult train_vanilla(const DatasetBundle& bundle, const TrainConfig& config) {
  return run_strategy(bundle, config, Strategy::Vanilla, [](ConceptModel& m, const TrainingData& d,
                                                            const TrainConfig& c, LossReport& r) {
    fit_end_to_end(m, d, c, LossWeights{1.0, 0.0}, "vanilla", r);
  });
}

TrainResult train_independent(const DatasetBundle& bundle, const TrainConfig& config) {
  return run_strategy(bundle, config, Strategy::Independent, [](ConceptModel& m, const TrainingData& d,
                                                                const TrainConfig& c, LossReport& r) {
    fit_concept_stage(m, d, c, r);
    fit_head_on_gold(m, d, c, r);
  });
}

TrainResult train_sequential(const DatasetBundle& bundle, const TrainConfig& config) {
  return run_strategy(bundle, config, Strategy::Sequential, [](ConceptModel& m, const TrainingData& d,
                                                               const TrainConfig& c, LossReport& r) {
    fit_concept_stage(m, d, c, r);
    fit_head_on_activations(m, d, c, r);
  });
}

TrainResult train_joint(const DatasetBundle& bundle, const TrainConfig& config) {
  return run_strategy(bundle, config, Strategy::Joint, [](ConceptModel& m, const TrainingData& d,
                                                          const TrainConfig& c, LossReport& r) {
    fit_end_to_end(m, d, c, LossWeights{1.0, c.gamma}, "joint", r);
  });
}

TrainResult train_joint_mixup(const DatasetBundle& bundle, const TrainConfig& config);  // defined in mixup.cpp

TrainResult train(const DatasetBundle& bundle, const TrainConfig& config) {
  switch (config.strategy) {
    case Strategy::Vanilla: return train_vanilla(bundle, config);
    case Strategy::Independent: return train_independent(bundle, config);
    case Strategy::Sequential: return train_sequential(bundle, config);
    case Strategy::Joint: return train_joint(bundle, config);
    case Strategy::JointMixup: return train_joint_mixup(bundle, config);
  }
  throw ConfigError("unknown strategy");
}

}  // namespace cbe
