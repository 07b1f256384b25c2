#include "cbe/intervene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <fmt/format.h>

#include "cbe/error.hpp"

namespace cbe {

namespace fs = std::filesystem;
using nlohmann::json;

// --- percentile table --------------------------------------------------------------

double InterventionTable::value_for(std::size_t j, ConceptValue v) const {
  const PercentileRow& r = rows.at(j);
  switch (v) {
    case ConceptValue::Negative: return r.p05;
    case ConceptValue::Positive: return r.p95;
    case ConceptValue::Unknown: return r.p50;
  }
  return r.p50;
}

double nearest_rank(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw ValidationError("percentile of an empty sample");
  const double n = static_cast<double>(sorted.size());
  // The epsilon absorbs representation error in q * n (0.95 * 20 = 19.000000000000004).
  auto rank = static_cast<std::size_t>(std::ceil(q * n - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return sorted[rank - 1];
}

InterventionTable table_from_activations(std::span<const Vector> activations, std::vector<std::string> names) {
  if (activations.empty()) throw ValidationError("intervention table needs at least one training row");
  InterventionTable t;
  t.samples = activations.size();
  const std::size_t k = names.size();
  t.concepts = std::move(names);
  std::vector<double> col(activations.size());
  for (std::size_t j = 0; j < k; ++j) {
    for (std::size_t i = 0; i < activations.size(); ++i) {
      if (static_cast<std::size_t>(activations[i].size()) != k)
        throw DimensionError(fmt::format("activation row {} has {} entries, expected {}", i, activations[i].size(), k));
      col[i] = activations[i][static_cast<Eigen::Index>(j)];
    }
    std::sort(col.begin(), col.end());
    t.rows.push_back({nearest_rank(col, 0.05), nearest_rank(col, 0.50), nearest_rank(col, 0.95)});
  }
  return t;
}

InterventionTable fit_intervention_table(const ConceptModel& model, std::span<const Example> rows) {
  std::vector<Vector> acts;
  acts.reserve(rows.size());
  for (const auto& ex : rows) acts.push_back(model.project(model.encoder().encode(ex.text)).scalar);
  return table_from_activations(acts, model.schema().names());
}

json to_json(const InterventionTable& t) {
  json rows = json::array();
  for (std::size_t j = 0; j < t.rows.size(); ++j) {
    rows.push_back({{"concept", t.concepts[j]}, {"p05", t.rows[j].p05}, {"p50", t.rows[j].p50}, {"p95", t.rows[j].p95}});
  }
  return {{"samples", t.samples}, {"concepts", rows}};
}

InterventionTable intervention_table_from_json(const json& j) {
  try {
    InterventionTable t;
    t.samples = j.at("samples").get<std::size_t>();
    for (const auto& r : j.at("concepts")) {
      t.concepts.push_back(r.at("concept").get<std::string>());
      t.rows.push_back({r.at("p05").get<double>(), r.at("p50").get<double>(), r.at("p95").get<double>()});
    }
    return t;
  } catch (const json::exception& e) {
    throw ParseError(std::string("intervention table: ") + e.what());
  }
}

void save_intervention_table(const InterventionTable& t, const fs::path& file) {
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + file.string());
  out << to_json(t).dump(2) << "\n";
}

InterventionTable load_intervention_table(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw ValidationError("cannot open " + file.string());
  try {
    return intervention_table_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ParseError(file.string() + ": " + e.what());
  }
}

// --- intervention --------------------------------------------------------------------

ConceptActivations apply_intervention(const ConceptActivations& a, const InterventionTable& table,
                                      const ConceptSchema& schema, const Edits& edits) {
  if (table.rows.size() != a.size() || schema.size() != a.size())
    throw DimensionError(fmt::format("intervention table has {} concepts, activations {}", table.rows.size(), a.size()));
  ConceptActivations out = a;
  if (out.overridden.size() != out.size()) out.overridden.assign(out.size(), false);
  for (const auto& [name, value] : edits) {
    const std::size_t j = schema.require_index(name);
    const auto row = static_cast<Eigen::Index>(j);
    out.scalar[row] = table.value_for(j, value);
    out.probs.row(row).setZero();
    out.probs(row, static_cast<Eigen::Index>(value)) = 1.0;
    out.overridden[j] = true;
  }
  return out;
}

// --- explanation -----------------------------------------------------------------

Explanation explain(const ConceptModel& model, const ConceptActivations& a, std::optional<int> cls) {
  if (!model.interpretable()) throw ConfigError("vanilla models have no concept explanation");
  const LinearHead& head = model.head();
  const auto pred = predict_label(head, a.scalar);
  Explanation e;
  e.predicted = pred.label;
  e.cls = cls.value_or(pred.label);
  if (e.cls < 0 || e.cls >= model.num_classes())
    throw ValidationError(fmt::format("class {} out of range [0, {})", e.cls, model.num_classes()));
  e.probabilities = pred.probs;
  e.bias = head.bias(e.cls, 0);
  double sum = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const auto col = static_cast<Eigen::Index>(j);
    ConceptContribution c;
    c.name = model.schema().at(j).name;
    c.value = a.predicted(j);
    c.activation = a.scalar[col];
    c.weight = head.weight(e.cls, col);
    c.contribution = c.weight * c.activation;
    c.neg = c.activation < 0.0;
    c.overridden = j < a.overridden.size() && a.overridden[j];
    sum += c.contribution;
    e.concepts.push_back(std::move(c));
  }
  e.logit = sum + e.bias;
  e.all_classes = head.weight * a.scalar.asDiagonal();
  std::stable_sort(e.concepts.begin(), e.concepts.end(), [](const auto& x, const auto& y) {
    return std::abs(x.contribution) > std::abs(y.contribution);
  });
  return e;
}

Explanation explain(const ConceptModel& model, std::string_view text, std::optional<int> cls) {
  return explain(model, model.project(model.encoder().encode(text)), cls);
}

json to_json(const Explanation& e) {
  json concepts = json::array();
  for (const auto& c : e.concepts) {
    concepts.push_back({{"name", c.name},
                        {"value", to_string(c.value)},
                        {"activation", c.activation},
                        {"weight", c.weight},
                        {"contribution", c.contribution},
                        {"neg", c.neg},
                        {"overridden", c.overridden}});
  }
  std::vector<double> probs(e.probabilities.data(), e.probabilities.data() + e.probabilities.size());
  json all = json::array();
  for (Eigen::Index c = 0; c < e.all_classes.rows(); ++c) {
    const Vector row = e.all_classes.row(c).transpose();
    all.push_back(std::vector<double>(row.data(), row.data() + row.size()));
  }
  return {{"class", e.cls},        {"predicted", e.predicted},  {"logit", e.logit},       {"bias", e.bias},
          {"probabilities", probs}, {"concepts", concepts}, {"all_classes", all}};
}

InterventionOutcome predict_with_intervention(const ConceptModel& model, const InterventionTable& table,
                                              std::string_view text, const Edits& edits) {
  InterventionOutcome o;
  o.before_activations = model.project(model.encoder().encode(text));
  o.after_activations = apply_intervention(o.before_activations, table, model.schema(), edits);
  o.before = predict_label(model.head(), o.before_activations.scalar);
  o.after = predict_label(model.head(), o.after_activations.scalar);
  o.before_explanation = explain(model, o.before_activations);
  o.after_explanation = explain(model, o.after_activations);
  return o;
}

json to_json(const InterventionOutcome& o) {
  return {{"before", to_json(o.before_explanation)}, {"after", to_json(o.after_explanation)},
          {"changed", o.before.label != o.after.label}};
}

// --- curves ----------------------------------------------------------------------

std::string_view to_string(InterventionPolicy p) { return p == InterventionPolicy::Oracle ? "oracle" : "random_wrong"; }

InterventionPolicy parse_intervention_policy(std::string_view s) {
  if (s == "oracle") return InterventionPolicy::Oracle;
  if (s == "random_wrong") return InterventionPolicy::RandomWrong;
  throw ConfigError(fmt::format("unknown intervention policy \"{}\" (oracle, random_wrong)", s));
}

std::vector<double> intervention_curve(const ConceptModel& model, const InterventionTable& table,
                                       std::span<const Example> rows, InterventionPolicy policy, Rng& rng) {
  if (rows.empty()) throw ValidationError("intervention curve over an empty split");
  const std::size_t k = model.schema().size();
  std::vector<std::size_t> correct(k + 1, 0);
  std::vector<std::size_t> order(k);
  std::uniform_int_distribution<int> coin(0, 1);
  for (const auto& ex : rows) {
    const ConceptActivations a = model.project(model.encoder().encode(ex.text));
    const auto gold = concept_values(ex, model.schema());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::optional<ConceptValue>> target(k);
    for (std::size_t j = 0; j < k; ++j) {
      if (!gold[j]) continue;
      if (policy == InterventionPolicy::Oracle) {
        target[j] = gold[j];
      } else {
        ConceptValue others[2];
        int n = 0;
        for (ConceptValue v : kConceptValues)
          if (v != *gold[j]) others[n++] = v;
        target[j] = others[coin(rng)];
      }
    }
    Vector scalar = a.scalar;
    correct[0] += predict_label(model.head(), scalar).label == ex.label;
    for (std::size_t s = 1; s <= k; ++s) {
      const std::size_t j = order[s - 1];
      if (target[j]) scalar[static_cast<Eigen::Index>(j)] = table.value_for(j, *target[j]);
      correct[s] += predict_label(model.head(), scalar).label == ex.label;
    }
  }
  std::vector<double> acc(k + 1);
  for (std::size_t s = 0; s <= k; ++s) acc[s] = static_cast<double>(correct[s]) / static_cast<double>(rows.size());
  return acc;
}

}  // namespace cbe
