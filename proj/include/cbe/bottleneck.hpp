#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cbe/encoder.hpp"
#include "cbe/linalg.hpp"
#include "cbe/schema.hpp"

namespace cbe {

/// Per-concept ternary probabilities plus the signed scalar activation
/// a_j = P(Positive) - P(Negative) consumed by the label predictor.
struct ConceptActivations {
  Matrix probs;   // k x 3, columns ordered as ConceptValue
  Vector scalar;  // k
  /// Set by test-time intervention; the probs row of an overridden concept is
  /// display-only and no longer consistent with `scalar`.
  std::vector<bool> overridden;

  std::size_t size() const { return static_cast<std::size_t>(scalar.size()); }
  ConceptValue predicted(std::size_t j) const;
};

/// Row-wise softmax over a k x 3 logit matrix.
ConceptActivations activations_from_logits(const Matrix& logits);

/// Concept projector: three affine logits per concept. Row 3j+v of `weight`
/// and `bias` produces the logit of value v for concept j.
struct ConceptProjector {
  Matrix weight;  // 3k x e
  Matrix bias;    // 3k x 1

  /// Weights ~ Uniform(-1/sqrt(e), 1/sqrt(e)), zero biases.
  static ConceptProjector random(std::size_t k, std::size_t e, Rng& rng);
  static ConceptProjector zeros(std::size_t k, std::size_t e);

  std::size_t num_concepts() const { return static_cast<std::size_t>(weight.rows() / 3); }
  std::size_t input_dim() const { return static_cast<std::size_t>(weight.cols()); }
};

/// k x 3 logits. Throws DimensionError if z does not match the projector.
Matrix concept_logits(const ConceptProjector& projector, const Vector& z);
ConceptActivations project(const ConceptProjector& projector, const Vector& z);

/// Affine classifier. In a bottleneck model its input is the scalar
/// activation vector; in a vanilla model it reads z directly.
struct LinearHead {
  Matrix weight;  // m x in
  Matrix bias;    // m x 1

  /// Weights ~ Uniform(-1/sqrt(in), 1/sqrt(in)), zero biases.
  static LinearHead random(std::size_t m, std::size_t in, Rng& rng);
  static LinearHead zeros(std::size_t m, std::size_t in);

  std::size_t num_classes() const { return static_cast<std::size_t>(weight.rows()); }
  std::size_t input_dim() const { return static_cast<std::size_t>(weight.cols()); }
};

struct LabelPrediction {
  Vector logits;
  Vector probs;
  int label = 0;  // argmax, lowest index wins ties
};

LabelPrediction predict_label(const LinearHead& head, const Vector& input);
inline LabelPrediction predict_label(const LinearHead& head, const ConceptActivations& a) {
  return predict_label(head, a.scalar);
}

enum class Strategy { Vanilla, Independent, Sequential, Joint, JointMixup };

std::string_view to_string(Strategy s);
Strategy parse_strategy(std::string_view s);

struct Provenance {
  Strategy strategy = Strategy::Joint;
  std::uint64_t seed = 0;
  std::string config_hash;
  nlohmann::json hyperparameters = nlohmann::json::object();
};

struct ForwardResult {
  Vector latent;
  std::optional<ConceptActivations> concepts;  // empty for vanilla models
  LabelPrediction label;
};

/// The assembled text -> latent -> concepts -> label pipeline. A model without
/// a projector is a vanilla (non-interpretable) classifier over z.
///
/// Inference is const and thread-safe; training works on a copy.
class ConceptModel {
 public:
  ConceptModel(std::unique_ptr<TextEncoder> encoder, std::optional<ConceptProjector> projector, LinearHead head,
               ConceptSchema schema, int num_classes, Provenance provenance = {});

  /// Bottleneck model with freshly initialized projector and head.
  static ConceptModel bottleneck(std::unique_ptr<TextEncoder> encoder, ConceptSchema schema, int num_classes,
                                 Rng& rng);
  /// Vanilla model: linear head directly on z.
  static ConceptModel vanilla(std::unique_ptr<TextEncoder> encoder, ConceptSchema schema, int num_classes, Rng& rng);

  ConceptModel(const ConceptModel& other);
  ConceptModel& operator=(const ConceptModel& other);
  ConceptModel(ConceptModel&&) noexcept = default;
  ConceptModel& operator=(ConceptModel&&) noexcept = default;

  bool interpretable() const { return projector_.has_value(); }
  const TextEncoder& encoder() const { return *encoder_; }
  TextEncoder& encoder() { return *encoder_; }
  const ConceptProjector& projector() const;
  ConceptProjector& projector();
  const LinearHead& head() const { return head_; }
  LinearHead& head() { return head_; }
  const ConceptSchema& schema() const { return schema_; }
  int num_classes() const { return num_classes_; }
  std::size_t latent_dim() const { return encoder_->dim(); }
  const Provenance& provenance() const { return provenance_; }
  Provenance& provenance() { return provenance_; }

  ConceptActivations project(const Vector& z) const;
  ForwardResult forward_latent(Vector z) const;
  ForwardResult forward(std::string_view text) const;

  /// Encoder params, then projector weight/bias, then head weight/bias.
  std::vector<Matrix*> parameters();
  std::vector<NamedTensor> named_parameters() const;
  /// Zero matrices shaped like parameters().
  std::vector<Matrix> zero_gradients() const;
  std::size_t num_encoder_parameters() const { return encoder_->named_parameters().size(); }

 private:
  std::unique_ptr<TextEncoder> encoder_;
  std::optional<ConceptProjector> projector_;
  LinearHead head_;
  ConceptSchema schema_;
  int num_classes_;
  Provenance provenance_;
};

/// Model directory: `model.json` (schema, m, e, strategy, seed,
/// hyperparameters, encoder config, tensor manifest) + `weights.bin`.
void save_model(const ConceptModel& model, const std::filesystem::path& dir);
ConceptModel load_model(const std::filesystem::path& dir);

}  // namespace cbe
