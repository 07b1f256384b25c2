#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace cbe {

// ---------------------------------------------------------------------------
// Concept values
// ---------------------------------------------------------------------------

/// Ternary concept state. The integer values are the canonical encoding and
/// index the columns of every k x 3 probability matrix in the library.
enum class ConceptValue : std::uint8_t { Negative = 0, Positive = 1, Unknown = 2 };

inline constexpr std::array<ConceptValue, 3> kConceptValues = {
    ConceptValue::Negative, ConceptValue::Positive, ConceptValue::Unknown};

std::string_view to_string(ConceptValue v);

/// Case-insensitive parse of "Negative" / "Positive" / "Unknown".
/// Throws SchemaError naming the offending string otherwise.
ConceptValue parse_concept_value(std::string_view s);

/// Probability vector over (Negative, Positive, Unknown).
using Simplex3 = std::array<double, 3>;

/// One-hot target for a label; an absent label stays absent (it is masked out
/// of the concept loss, which is different from training the Unknown class).
std::optional<Simplex3> encode_concept_target(std::optional<ConceptValue> v);

// ---------------------------------------------------------------------------
// Schema
// ---------------------------------------------------------------------------

enum class ConceptOrigin { Human, Generated };
enum class LabelSource { Human, Llm };

std::string_view to_string(ConceptOrigin o);
std::string_view to_string(LabelSource s);
ConceptOrigin parse_concept_origin(std::string_view s);
LabelSource parse_label_source(std::string_view s);

struct ConceptSpec {
  std::string name;
  ConceptOrigin origin = ConceptOrigin::Human;

  bool operator==(const ConceptSpec&) const = default;
};

/// Ordered concept list. Position j is concept j everywhere: activation
/// vectors, projector rows, label-predictor columns and intervention tables.
class ConceptSchema {
 public:
  ConceptSchema() = default;
  /// Throws SchemaError on an empty list, an empty name or a duplicate name.
  explicit ConceptSchema(std::vector<ConceptSpec> concepts);

  std::size_t size() const { return concepts_.size(); }
  std::size_t num_human() const;
  std::size_t num_generated() const;
  bool empty() const { return concepts_.empty(); }

  const ConceptSpec& at(std::size_t i) const { return concepts_.at(i); }
  const std::vector<ConceptSpec>& concepts() const { return concepts_; }
  std::vector<std::string> names() const;
  std::optional<std::size_t> index_of(std::string_view name) const;
  /// Like index_of but throws SchemaError naming the concept.
  std::size_t require_index(std::string_view name) const;

  /// Schema restricted to the human concepts, order preserved.
  ConceptSchema human_only() const;
  /// This schema followed by `generated` as generated concepts.
  ConceptSchema with_generated(const std::vector<std::string>& generated) const;

  bool operator==(const ConceptSchema&) const = default;

 private:
  std::vector<ConceptSpec> concepts_;
};

nlohmann::json to_json(const ConceptSchema& schema);
ConceptSchema schema_from_json(const nlohmann::json& j);
/// Reads a JSON array of {"name", "origin"} objects.
ConceptSchema load_schema(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Examples and datasets
// ---------------------------------------------------------------------------

struct ConceptLabel {
  ConceptValue value = ConceptValue::Unknown;
  LabelSource source = LabelSource::Human;

  bool operator==(const ConceptLabel&) const = default;
};

struct Example {
  std::string id;
  std::string text;
  int label = 0;
  /// Absent key: no label. Keyed by concept name.
  std::map<std::string, ConceptLabel> concepts;

  bool operator==(const Example&) const = default;
};

/// Positional view of an example's labels under `schema`.
std::vector<std::optional<ConceptValue>> concept_values(const Example& ex, const ConceptSchema& schema);

enum class Partition : std::uint8_t { Source = 0, Unlabeled = 1, SourceAug = 2, UnlabeledAug = 3 };
enum class Split : std::uint8_t { Train = 0, Dev = 1, Test = 2 };

inline constexpr std::array<Partition, 4> kPartitions = {Partition::Source, Partition::Unlabeled,
                                                         Partition::SourceAug, Partition::UnlabeledAug};
inline constexpr std::array<Split, 3> kSplits = {Split::Train, Split::Dev, Split::Test};

/// On-disk names: "source", "unlabeled", "source_aug", "unlabeled_aug".
std::string_view to_string(Partition p);
std::string_view to_string(Split s);
Partition parse_partition(std::string_view s);
Split parse_split(std::string_view s);

using SplitSet = std::array<std::vector<Example>, 3>;

/// The four data portions (human-labeled source, unlabeled, and their
/// LLM-augmented counterparts), each split train/dev/test. Immutable once
/// constructed; the constructor enforces every labeling invariant.
class DatasetBundle {
 public:
  DatasetBundle() = default;
  DatasetBundle(std::string name, ConceptSchema schema, int num_classes,
                std::array<SplitSet, 4> partitions);

  const std::string& name() const { return name_; }
  const ConceptSchema& schema() const { return schema_; }
  int num_classes() const { return num_classes_; }

  const std::vector<Example>& split(Partition p, Split s) const {
    return partitions_[static_cast<std::size_t>(p)][static_cast<std::size_t>(s)];
  }
  const SplitSet& partition(Partition p) const { return partitions_[static_cast<std::size_t>(p)]; }
  std::size_t size(Partition p, Split s) const { return split(p, s).size(); }
  bool has_partition(Partition p) const;

 private:
  std::string name_;
  ConceptSchema schema_;
  int num_classes_ = 0;
  std::array<SplitSet, 4> partitions_;
};

nlohmann::json to_json(const Example& ex);
/// `default_source` applies to the shorthand `"Food": "Positive"` form.
Example example_from_json(const nlohmann::json& j, const ConceptSchema& schema, LabelSource default_source);

/// Loads `dir/manifest.json` plus one `<partition>.<split>.jsonl` per split,
/// validating against the manifest schema.
DatasetBundle load_dataset(const std::filesystem::path& dir);
/// As above but validates against `schema` instead of the manifest's.
DatasetBundle load_dataset(const std::filesystem::path& dir, const ConceptSchema& schema);
/// Canonical, key-sorted serialization; save(load(save(b))) is byte-stable.
void save_dataset(const DatasetBundle& bundle, const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

struct ValueCounts {
  std::array<std::size_t, 3> counts{};  // indexed by ConceptValue
  std::size_t absent = 0;

  std::size_t present() const { return counts[0] + counts[1] + counts[2]; }
  /// Shares over present labels; nullopt when nothing is labeled.
  std::optional<Simplex3> shares() const;
};

struct ConceptStats {
  Partition partition;
  std::string concept_name;
  ValueCounts counts;  // pooled over train/dev/test
};

/// One entry per (partition, concept) for every non-empty partition.
std::vector<ConceptStats> dataset_stats(const DatasetBundle& bundle);
nlohmann::json to_json(const std::vector<ConceptStats>& stats);
/// Renders "1693 (33.1%)" style cells, one row per concept.
std::string format_stats_table(const std::vector<ConceptStats>& stats);

}  // namespace cbe
