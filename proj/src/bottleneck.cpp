#include "cbe/bottleneck.hpp"

#include <cmath>
#include <fstream>

#include <fmt/format.h>

#include "cbe/error.hpp"

namespace cbe {

namespace fs = std::filesystem;
using nlohmann::json;

ConceptValue ConceptActivations::predicted(std::size_t j) const {
  const auto row = static_cast<Eigen::Index>(j);
  int best = 0;
  for (int v = 1; v < 3; ++v) {
    if (probs(row, v) > probs(row, best)) best = v;
  }
  return static_cast<ConceptValue>(best);
}

ConceptActivations activations_from_logits(const Matrix& logits) {
  const auto k = logits.rows();
  ConceptActivations a;
  a.probs.resize(k, 3);
  a.scalar.resize(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    const double mx = logits.row(j).maxCoeff();
    double sum = 0.0;
    for (int v = 0; v < 3; ++v) sum += a.probs(j, v) = std::exp(logits(j, v) - mx);
    a.probs.row(j) /= sum;
    a.scalar[j] = a.probs(j, 1) - a.probs(j, 0);
  }
  a.overridden.assign(static_cast<std::size_t>(k), false);
  return a;
}

ConceptProjector ConceptProjector::random(std::size_t k, std::size_t e, Rng& rng) {
  ConceptProjector p = zeros(k, e);
  fill_uniform(p.weight, 1.0 / std::sqrt(static_cast<double>(e)), rng);
  return p;
}

ConceptProjector ConceptProjector::zeros(std::size_t k, std::size_t e) {
  const auto rows = static_cast<Eigen::Index>(3 * k);
  return {Matrix::Zero(rows, static_cast<Eigen::Index>(e)), Matrix::Zero(rows, 1)};
}

Matrix concept_logits(const ConceptProjector& projector, const Vector& z) {
  if (static_cast<std::size_t>(z.size()) != projector.input_dim())
    throw DimensionError(fmt::format("latent has {} entries, projector expects {}", z.size(), projector.input_dim()));
  Vector flat = projector.weight * z + projector.bias.col(0);
  return Eigen::Map<const Matrix>(flat.data(), static_cast<Eigen::Index>(projector.num_concepts()), 3);
}

ConceptActivations project(const ConceptProjector& projector, const Vector& z) {
  return activations_from_logits(concept_logits(projector, z));
}

LinearHead LinearHead::random(std::size_t m, std::size_t in, Rng& rng) {
  LinearHead h = zeros(m, in);
  fill_uniform(h.weight, 1.0 / std::sqrt(static_cast<double>(in)), rng);
  return h;
}

LinearHead LinearHead::zeros(std::size_t m, std::size_t in) {
  const auto rows = static_cast<Eigen::Index>(m);
  return {Matrix::Zero(rows, static_cast<Eigen::Index>(in)), Matrix::Zero(rows, 1)};
}

LabelPrediction predict_label(const LinearHead& head, const Vector& input) {
  if (static_cast<std::size_t>(input.size()) != head.input_dim())
    throw DimensionError(fmt::format("label predictor expects {} inputs, got {}", head.input_dim(), input.size()));
  LabelPrediction out;
  out.logits = head.weight * input + head.bias.col(0);
  out.probs = softmax(out.logits);
  out.label = argmax(out.logits);
  return out;
}

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::Vanilla: return "vanilla";
    case Strategy::Independent: return "independent";
    case Strategy::Sequential: return "sequential";
    case Strategy::Joint: return "joint";
    case Strategy::JointMixup: return "joint_mixup";
  }
  return "joint";
}

Strategy parse_strategy(std::string_view s) {
  for (Strategy st : {Strategy::Vanilla, Strategy::Independent, Strategy::Sequential, Strategy::Joint,
                      Strategy::JointMixup}) {
    if (s == to_string(st)) return st;
  }
  throw ConfigError(fmt::format("unknown strategy \"{}\"", s));
}

// --- model ---------------------------------------------------------------------

ConceptModel::ConceptModel(std::unique_ptr<TextEncoder> encoder, std::optional<ConceptProjector> projector,
                           LinearHead head, ConceptSchema schema, int num_classes, Provenance provenance)
    : encoder_(std::move(encoder)), projector_(std::move(projector)), head_(std::move(head)),
      schema_(std::move(schema)), num_classes_(num_classes), provenance_(std::move(provenance)) {
  if (!encoder_) throw ConfigError("model needs an encoder");
  const std::size_t e = encoder_->dim();
  if (head_.num_classes() != static_cast<std::size_t>(num_classes_))
    throw DimensionError(fmt::format("head has {} classes, model {}", head_.num_classes(), num_classes_));
  if (projector_) {
    if (projector_->input_dim() != e)
      throw DimensionError(fmt::format("projector reads {} dims, encoder gives {}", projector_->input_dim(), e));
    if (projector_->num_concepts() != schema_.size())
      throw DimensionError(
          fmt::format("projector has {} concepts, schema {}", projector_->num_concepts(), schema_.size()));
    if (head_.input_dim() != schema_.size())
      throw DimensionError(fmt::format("head reads {} concepts, schema has {}", head_.input_dim(), schema_.size()));
  } else if (head_.input_dim() != e) {
    throw DimensionError(fmt::format("vanilla head reads {} dims, encoder gives {}", head_.input_dim(), e));
  }
}

ConceptModel ConceptModel::bottleneck(std::unique_ptr<TextEncoder> encoder, ConceptSchema schema, int num_classes,
                                      Rng& rng) {
  const std::size_t e = encoder->dim();
  const std::size_t k = schema.size();
  auto proj = ConceptProjector::random(k, e, rng);
  auto head = LinearHead::random(static_cast<std::size_t>(num_classes), k, rng);
  return ConceptModel(std::move(encoder), std::move(proj), std::move(head), std::move(schema), num_classes);
}

ConceptModel ConceptModel::vanilla(std::unique_ptr<TextEncoder> encoder, ConceptSchema schema, int num_classes,
                                   Rng& rng) {
  const std::size_t e = encoder->dim();
  auto head = LinearHead::random(static_cast<std::size_t>(num_classes), e, rng);
  Provenance prov;
  prov.strategy = Strategy::Vanilla;
  return ConceptModel(std::move(encoder), std::nullopt, std::move(head), std::move(schema), num_classes, prov);
}

ConceptModel::ConceptModel(const ConceptModel& other)
    : encoder_(other.encoder_->clone()), projector_(other.projector_), head_(other.head_), schema_(other.schema_),
      num_classes_(other.num_classes_), provenance_(other.provenance_) {}

ConceptModel& ConceptModel::operator=(const ConceptModel& other) {
  if (this != &other) *this = ConceptModel(other);
  return *this;
}

const ConceptProjector& ConceptModel::projector() const {
  if (!projector_) throw ConfigError("vanilla model has no concept projector");
  return *projector_;
}

ConceptProjector& ConceptModel::projector() {
  if (!projector_) throw ConfigError("vanilla model has no concept projector");
  return *projector_;
}

ConceptActivations ConceptModel::project(const Vector& z) const { return cbe::project(projector(), z); }

ForwardResult ConceptModel::forward_latent(Vector z) const {
  ForwardResult r;
  if (projector_) {
    r.concepts = cbe::project(*projector_, z);
    r.label = predict_label(head_, r.concepts->scalar);
  } else {
    r.label = predict_label(head_, z);
  }
  r.latent = std::move(z);
  return r;
}

ForwardResult ConceptModel::forward(std::string_view text) const { return forward_latent(encoder_->encode(text)); }

std::vector<Matrix*> ConceptModel::parameters() {
  auto out = encoder_->parameters();
  if (projector_) {
    out.push_back(&projector_->weight);
    out.push_back(&projector_->bias);
  }
  out.push_back(&head_.weight);
  out.push_back(&head_.bias);
  return out;
}

std::vector<NamedTensor> ConceptModel::named_parameters() const {
  auto out = encoder_->named_parameters();
  if (projector_) {
    out.push_back({"projector.weight", &projector_->weight});
    out.push_back({"projector.bias", &projector_->bias});
  }
  out.push_back({"head.weight", &head_.weight});
  out.push_back({"head.bias", &head_.bias});
  return out;
}

std::vector<Matrix> ConceptModel::zero_gradients() const {
  std::vector<Matrix> out;
  for (const auto& t : named_parameters()) out.push_back(Matrix::Zero(t.value->rows(), t.value->cols()));
  return out;
}

// --- persistence -----------------------------------------------------------------

void save_model(const ConceptModel& model, const fs::path& dir) {
  fs::create_directories(dir);
  json manifest = {
      {"format", "cbe-model/1"},
      {"schema", to_json(model.schema())},
      {"num_classes", model.num_classes()},
      {"latent_dim", model.latent_dim()},
      {"interpretable", model.interpretable()},
      {"strategy", to_string(model.provenance().strategy)},
      {"seed", model.provenance().seed},
      {"config_hash", model.provenance().config_hash},
      {"hyperparameters", model.provenance().hyperparameters},
      {"encoder", model.encoder().config()},
  };
  manifest["tensors"] = write_tensors(dir / "weights.bin", model.named_parameters());
  std::ofstream out(dir / "model.json", std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + (dir / "model.json").string());
  out << manifest.dump(2) << "\n";
}

ConceptModel load_model(const fs::path& dir) {
  std::ifstream in(dir / "model.json");
  if (!in) throw ValidationError("cannot open " + (dir / "model.json").string());
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("model.json: ") + e.what());
  }
  try {
    auto tensors = read_tensors(dir / "weights.bin", manifest.at("tensors"));
    const auto& enc_cfg = manifest.at("encoder");
    const std::size_t n_enc = enc_cfg.at("kind") == "embedding_bag" ? 1 : 0;
    const bool interpretable = manifest.at("interpretable").get<bool>();
    const std::size_t expected = n_enc + (interpretable ? 4 : 2);
    if (tensors.size() != expected)
      throw ParseError(fmt::format("model.json lists {} tensors, expected {}", tensors.size(), expected));
    std::vector<Matrix> enc_tensors(std::make_move_iterator(tensors.begin()),
                                    std::make_move_iterator(tensors.begin() + static_cast<std::ptrdiff_t>(n_enc)));
    auto encoder = make_encoder(enc_cfg, std::move(enc_tensors));
    std::size_t i = n_enc;
    std::optional<ConceptProjector> proj;
    if (interpretable) {
      proj = ConceptProjector{std::move(tensors[i]), std::move(tensors[i + 1])};
      i += 2;
    }
    LinearHead head{std::move(tensors[i]), std::move(tensors[i + 1])};
    Provenance prov;
    prov.strategy = parse_strategy(manifest.at("strategy").get<std::string>());
    prov.seed = manifest.value("seed", std::uint64_t{0});
    prov.config_hash = manifest.value("config_hash", std::string{});
    prov.hyperparameters = manifest.value("hyperparameters", json::object());
    return ConceptModel(std::move(encoder), std::move(proj), std::move(head), schema_from_json(manifest.at("schema")),
                        manifest.at("num_classes").get<int>(), std::move(prov));
  } catch (const json::exception& e) {
    throw ParseError(std::string("model.json: ") + e.what());
  }
}

}  // namespace cbe
