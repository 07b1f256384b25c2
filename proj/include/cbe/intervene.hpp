#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cbe/bottleneck.hpp"

namespace cbe {

/// Substitution values for one concept: the 5th, 50th and 95th percentiles of
/// its scalar activation over the training rows.
struct PercentileRow {
  double p05 = 0.0;
  double p50 = 0.0;
  double p95 = 0.0;
};

struct InterventionTable {
  std::vector<std::string> concepts;
  std::vector<PercentileRow> rows;
  std::size_t samples = 0;

  /// p05 for Negative, p95 for Positive, p50 for Unknown.
  double value_for(std::size_t j, ConceptValue v) const;
};

/// Nearest-rank percentile of ascending `sorted`: element ceil(q * n)
/// (1-based, at least 1). Throws ValidationError on an empty sample.
double nearest_rank(std::span<const double> sorted, double q);

/// Table over per-row activation vectors (each of length names.size()).
InterventionTable table_from_activations(std::span<const Vector> activations, std::vector<std::string> names);
/// Runs the model over `rows` and tabulates. Throws ValidationError if empty.
InterventionTable fit_intervention_table(const ConceptModel& model, std::span<const Example> rows);

nlohmann::json to_json(const InterventionTable& t);
InterventionTable intervention_table_from_json(const nlohmann::json& j);
void save_intervention_table(const InterventionTable& t, const std::filesystem::path& file);
InterventionTable load_intervention_table(const std::filesystem::path& file);

/// Concept name -> target value, applied in order (a later edit of the same
/// concept wins).
using Edits = std::vector<std::pair<std::string, ConceptValue>>;

/// Replaces the scalar activation of every edited concept by its table value.
/// The probs row of an edited concept becomes the one-hot of the requested
/// value and is flagged overridden. Throws SchemaError on unknown names.
ConceptActivations apply_intervention(const ConceptActivations& a, const InterventionTable& table,
                                      const ConceptSchema& schema, const Edits& edits);

struct ConceptContribution {
  std::string name;
  ConceptValue value = ConceptValue::Unknown;  // argmax of the concept's probs
  double activation = 0.0;
  double weight = 0.0;        // head weight of the explained class
  double contribution = 0.0;  // weight * activation
  bool neg = false;           // activation < 0
  bool overridden = false;
};

struct Explanation {
  int cls = 0;        // explained class
  int predicted = 0;  // argmax class
  double logit = 0.0;  // bias + sum of contributions (in concept order)
  double bias = 0.0;
  Vector probabilities;
  std::vector<ConceptContribution> concepts;  // sorted by |contribution|, descending
  /// Contributions for every class: row c, column j (schema order).
  Matrix all_classes;
};

/// Linear decomposition of the head at `a`, for `cls` (default: the
/// predicted class). Throws ConfigError for vanilla models, ValidationError
/// for an out-of-range class.
Explanation explain(const ConceptModel& model, const ConceptActivations& a, std::optional<int> cls = std::nullopt);
Explanation explain(const ConceptModel& model, std::string_view text, std::optional<int> cls = std::nullopt);

nlohmann::json to_json(const Explanation& e);

struct InterventionOutcome {
  ConceptActivations before_activations, after_activations;
  LabelPrediction before, after;
  Explanation before_explanation, after_explanation;
};

/// Encodes `text` once, applies `edits` and re-runs only the label predictor.
InterventionOutcome predict_with_intervention(const ConceptModel& model, const InterventionTable& table,
                                              std::string_view text, const Edits& edits);

nlohmann::json to_json(const InterventionOutcome& o);

enum class InterventionPolicy { Oracle, RandomWrong };
std::string_view to_string(InterventionPolicy p);
InterventionPolicy parse_intervention_policy(std::string_view s);

/// Task accuracy on `rows` after editing s = 0..k concepts per row. Each row
/// draws one random concept order and edits its first s entries, so the
/// edited sets are nested in s; concepts without a stored label are left
/// alone. Oracle sets the stored label, random_wrong one of the two other
/// values (drawn once per row and concept).
std::vector<double> intervention_curve(const ConceptModel& model, const InterventionTable& table,
                                       std::span<const Example> rows, InterventionPolicy policy, Rng& rng);

}  // namespace cbe
