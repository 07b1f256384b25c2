#include "cbe/mixup.hpp"

#include <algorithm>
#include <chrono>
#include <map>
#include <numeric>
#include <random>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "cbe/error.hpp"
#include "cbe/hash.hpp"

namespace cbe {

double sample_lambda(double alpha, Rng& rng) {
  if (!(alpha > 0.0)) throw ConfigError(fmt::format("Beta parameter must be > 0, got {}", alpha));
  std::gamma_distribution<double> gamma(alpha, 1.0);
  for (;;) {
    const double x = gamma(rng);
    const double y = gamma(rng);
    // Both draws can underflow to zero for very small alpha; redraw then.
    if (x + y > 0.0) return fold_lambda(x / (x + y));
  }
}

MixSide mix_side(const PreparedRow& row, Vector z, int num_classes) {
  MixSide s;
  s.z = std::move(z);
  s.y = one_hot(row.label, num_classes);
  s.id = row.example ? row.example->id : std::string{};
  s.concepts.reserve(row.concepts.size());
  for (std::size_t j = 0; j < row.concepts.size(); ++j) {
    if (!row.concepts[j]) throw ValidationError(fmt::format("row \"{}\" lacks concept {} needed for mixing", s.id, j));
    s.concepts.push_back(*row.concepts[j]);
  }
  return s;
}

MixedInstance mix_pair(const MixSide& i, const MixSide& j, double lambda_hat) {
  if (i.z.size() != j.z.size() || i.y.size() != j.y.size() || i.concepts.size() != j.concepts.size())
    throw DimensionError("mixup pair has mismatched shapes");
  const double l = lambda_hat, r = 1.0 - lambda_hat;
  MixedInstance out;
  out.z = l * i.z + r * j.z;
  out.y = l * i.y + r * j.y;
  out.concepts.resize(i.concepts.size());
  for (std::size_t c = 0; c < i.concepts.size(); ++c)
    for (std::size_t v = 0; v < 3; ++v) out.concepts[c][v] = l * i.concepts[c][v] + r * j.concepts[c][v];
  out.lambda_hat = lambda_hat;
  out.id_i = i.id;
  out.id_j = j.id;
  return out;
}

std::vector<PoolRef> build_shuffle(std::size_t n_sa, std::size_t n_u, Rng& rng) {
  if (n_sa + n_u == 0) throw ValidationError("mixup needs at least one augmented training row");
  std::vector<PoolRef> w;
  w.reserve(n_sa + n_u);
  for (std::size_t i = 0; i < n_sa; ++i) w.push_back({false, i});
  for (std::size_t i = 0; i < n_u; ++i) w.push_back({true, i});
  std::shuffle(w.begin(), w.end(), rng);
  return w;
}

namespace {

struct SideTotals {
  double task = 0.0, concept_loss = 0.0, combined = 0.0;
  std::size_t rows = 0;
};

}  // namespace

EpochLog mixup_epoch(ConceptModel& model, std::span<const PreparedRow> sa, std::span<const PreparedRow> u,
                     const TrainConfig& config, Adam& optimizer, Rng& rng, std::size_t epoch, LossReport& report) {
  if (config.tau < 0.0) throw ConfigError(fmt::format("tau must be >= 0, got {}", config.tau));
  if (!model.interpretable()) throw ConfigError("mixup training needs a concept bottleneck model");
  const auto w = build_shuffle(sa.size(), u.size(), rng);
  const std::size_t n = std::max(sa.size(), u.size());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  const int m = model.num_classes();
  const std::size_t n_enc = model.num_encoder_parameters();
  const auto mask = trainable_mask(model, !config.freeze_encoder, true, true);
  const LossWeights weights{1.0, config.gamma};
  auto row_of = [&](PoolRef ref) -> const PreparedRow& { return ref.unlabeled ? u[ref.index] : sa[ref.index]; };

  EpochLog elog;
  elog.epoch = epoch;
  elog.stage = "joint_mixup";
  std::size_t steps = 0, clamped = 0;
  for (std::size_t start = 0; start < n; start += config.batch_size, ++steps) {
    const std::size_t end = std::min(n, start + config.batch_size);
    // Pairs of (dominant row, partner) for each side of this batch.
    std::vector<std::pair<PoolRef, PoolRef>> pairs_sa, pairs_u;
    for (std::size_t b = start; b < end; ++b) {
      const std::size_t i = order[b];
      if (!sa.empty()) pairs_sa.push_back({{false, i % sa.size()}, w[i]});
      if (!u.empty()) pairs_u.push_back({{true, i % u.size()}, w[i]});
    }

    std::map<std::pair<bool, std::size_t>, Vector> latents, grad_latents;
    auto latent = [&](PoolRef ref) -> const Vector& {
      auto key = std::make_pair(ref.unlabeled, ref.index);
      auto it = latents.find(key);
      if (it == latents.end()) it = latents.emplace(key, model.encoder().encode_prepared(row_of(ref).input)).first;
      return it->second;
    };
    auto add_grad = [&](PoolRef ref, const Vector& g) {
      auto [it, fresh] = grad_latents.try_emplace({ref.unlabeled, ref.index}, g);
      if (!fresh) it->second += g;
    };

    auto grads = model.zero_gradients();
    auto run_side = [&](const std::vector<std::pair<PoolRef, PoolRef>>& pairs, double side_weight) {
      SideTotals t;
      if (pairs.empty()) return t;
      const double scale = side_weight / static_cast<double>(pairs.size());
      for (const auto& [ri, rj] : pairs) {
        const double lambda_hat = config.fixed_lambda ? *config.fixed_lambda : sample_lambda(config.alpha, rng);
        report.record_lambda(lambda_hat);
        const MixSide si = mix_side(row_of(ri), latent(ri), m);
        const MixSide sj = mix_side(row_of(rj), latent(rj), m);
        const MixedInstance mixed = mix_pair(si, sj, lambda_hat);
        std::vector<std::optional<Simplex3>> targets(mixed.concepts.begin(), mixed.concepts.end());
        Vector gz;
        const auto terms = latent_loss(model, mixed.z, targets, mixed.y, weights, scale, &grads, &gz);
        clamped += terms.clamped;
        add_grad(ri, lambda_hat * gz);
        add_grad(rj, (1.0 - lambda_hat) * gz);
        t.task += terms.task;
        t.concept_loss += terms.concept_loss;
        t.combined += terms.combined;
        ++t.rows;
      }
      const double k = static_cast<double>(t.rows);
      t.task /= k;
      t.concept_loss /= k;
      t.combined /= k;
      return t;
    };
    const SideTotals ls = run_side(pairs_sa, 1.0);
    const SideTotals lu = run_side(pairs_u, config.tau);

    if (mask.front() && n_enc) {
      for (const auto& [key, g] : grad_latents) {
        const PreparedRow& r = row_of({key.first, key.second});
        model.encoder().backward(r.input, g, std::span<Matrix>(grads.data(), n_enc));
      }
    }

    StepLog s;
    s.epoch = epoch;
    s.step = steps;
    s.stage = elog.stage;
    s.loss_sa = ls.combined;
    s.loss_u = lu.combined;
    s.combined = ls.combined + config.tau * lu.combined;
    s.task = ls.task + config.tau * lu.task;
    s.concept_loss = ls.concept_loss + config.tau * lu.concept_loss;
    if (config.log_steps) report.steps.push_back(s);
    elog.task += s.task;
    elog.concept_loss += s.concept_loss;
    elog.combined += s.combined;
    elog.loss_sa += s.loss_sa;
    elog.loss_u += s.loss_u;
    optimizer.step(model.parameters(), grads, mask);
  }
  if (steps) {
    const double k = static_cast<double>(steps);
    elog.task /= k;
    elog.concept_loss /= k;
    elog.combined /= k;
    elog.loss_sa /= k;
    elog.loss_u /= k;
  }
  if (clamped)
    report.warnings.push_back(
        fmt::format("joint_mixup epoch {}: {} concept probabilities clamped at {}", epoch, clamped, kProbFloor));
  return elog;
}

TrainResult train_joint_mixup(const DatasetBundle& bundle, const TrainConfig& cfg) {
  TrainConfig config = cfg;
  config.strategy = Strategy::JointMixup;
  config.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const TrainingData data = select_training_data(bundle, config);
  ConceptModel model = initial_model(data, config);
  LossReport report;
  const auto sa = prepare_rows(model.encoder(), model.schema(), data.train_source, model.num_classes());
  const auto u = prepare_rows(model.encoder(), model.schema(), data.train_unlabeled, model.num_classes());
  const auto dev = prepare_rows(model.encoder(), model.schema(), data.dev, model.num_classes());
  if (sa.empty() && u.empty()) throw ValidationError("empty training split");

  Rng rng(derive_seed(config.seed, "joint_mixup"));
  Adam opt(config.learning_rate);
  EarlyStopper stopper(model, config.patience);
  for (std::size_t epoch = 1; epoch <= config.encoder_epochs; ++epoch) {
    EpochLog elog = mixup_epoch(model, sa, u, config, opt, rng, epoch, report);
    const auto scores = score_rows(model, dev);
    elog.dev_task_accuracy = scores.task_accuracy;
    elog.dev_concept_accuracy = scores.concept_accuracy;
    elog.dev_concept_ce = scores.concept_ce;
    report.epochs.push_back(elog);
    if (stopper.update(model, scores.task_accuracy, dev_tie_break(scores, LossWeights{1.0, config.gamma}))) break;
  }
  stopper.restore(model);
  for (const auto& w : report.warnings) spdlog::warn("{}", w);
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {std::move(model), std::move(report)};
}

}  // namespace cbe
