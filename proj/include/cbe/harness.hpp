#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cbe/bottleneck.hpp"
#include "cbe/llm_augment.hpp"
#include "cbe/training.hpp"

namespace cbe {

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct ScorePair {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
};

/// Accuracy and macro-F1 over classes 0..num_classes-1. A class with no
/// gold and no predicted rows scores F1 = 0 and still counts in the mean.
/// Throws ValidationError on empty or mismatched inputs.
ScorePair classification_scores(std::span<const int> predicted, std::span<const int> gold, int num_classes);

struct ConceptMetric {
  std::string name;
  ScorePair score;
  std::size_t support = 0;  // rows with a stored label
};

struct Metrics {
  ScorePair task;
  std::vector<ConceptMetric> concepts;  // concepts with support > 0
  std::optional<ScorePair> concept_mean;  // unweighted; empty for vanilla models
  std::size_t rows = 0;
  std::size_t k = 0;
};

/// Task metrics over argmax predictions and per-concept metrics over argmax
/// concept values against stored labels (absent labels skipped).
Metrics evaluate(const ConceptModel& model, std::span<const Example> rows);
nlohmann::json to_json(const Metrics& m);

/// Spearman rank correlation with average ranks for ties. Returns 0 when
/// either side is constant.
double spearman(std::span<const double> x, std::span<const double> y);

// ---------------------------------------------------------------------------
// Synthetic benchmark
// ---------------------------------------------------------------------------

/// Phrases per concept and value.
using Lexicon = std::map<std::string, std::map<ConceptValue, std::vector<std::string>>>;

struct SyntheticSpec {
  std::size_t k = 4;
  int m = 2;
  /// The first num_human concepts are human-labeled in the source partition;
  /// the rest are generated (left for the annotator). Default: all.
  std::optional<std::size_t> num_human;
  std::array<std::size_t, 3> source_sizes{2000, 500, 500};
  std::array<std::size_t, 3> unlabeled_sizes{0, 0, 0};
  Simplex3 value_prior{1.0 / 3, 1.0 / 3, 1.0 / 3};  // Negative, Positive, Unknown
  /// Probability that a concept's phrase is replaced by its value-agnostic
  /// "hidden" phrase, so the text no longer reveals the value.
  double hidden_rate = 0.0;
  std::uint64_t seed = 0;
  std::string name = "synthetic";
  /// Empty: default_lexicon(k).
  Lexicon lexicon;
  std::map<std::string, std::string> hidden_phrases;
};

/// Concept names: Food, Service, Ambiance, Noise, then Aspect5, Aspect6, ...
std::vector<std::string> synthetic_concept_names(std::size_t k);
/// Phrase lexicon with concept-specific wording (no polarity word is shared
/// across concepts, so a bag of words can tell them apart).
Lexicon default_lexicon(std::size_t k);
std::map<std::string, std::string> default_hidden_phrases(std::size_t k);

/// m = 2: class 1 iff #Positive > #Negative. Otherwise the score
/// (#Positive - #Negative + k) / 2k is binned into m equal-width classes.
int synthetic_label(std::span<const std::optional<ConceptValue>> values, int m);

/// Throws ConfigError on an invalid spec or a lexicon lacking a cell.
DatasetBundle gen_synthetic(const SyntheticSpec& spec);
nlohmann::json to_json(const SyntheticSpec& spec);
SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j, SyntheticSpec base = {});

/// Mock annotator rules that recover the lexicon's values.
KeywordRules rules_from_lexicon(const Lexicon& lexicon);

// ---------------------------------------------------------------------------
// Benchmark
// ---------------------------------------------------------------------------

struct BenchmarkConfig {
  std::vector<Strategy> strategies{Strategy::Vanilla, Strategy::Independent, Strategy::Sequential, Strategy::Joint,
                                   Strategy::JointMixup};
  std::vector<DataSetting> settings{DataSetting::Source, DataSetting::Augmented};
  std::vector<std::uint64_t> seeds{0};
  TrainConfig base;
  Split eval_split = Split::Test;
};

struct BenchmarkRun {
  std::uint64_t seed = 0;
  std::optional<Metrics> metrics;
  std::string error;  // set when training or evaluation failed
};

struct BenchmarkCell {
  Strategy strategy = Strategy::Joint;
  DataSetting setting = DataSetting::Source;
  bool applicable = true;  // joint_mixup only runs on augmented data
  std::size_t k = 0;
  std::vector<BenchmarkRun> runs;
};

struct BenchmarkReport {
  std::string dataset;
  std::vector<BenchmarkCell> cells;
};

/// Trains every (strategy, setting, seed) cell and evaluates it on the eval
/// split of source (D) or source_aug (D~). A failing cell records its error
/// and the run continues.
BenchmarkReport run_benchmark(const DatasetBundle& bundle, const BenchmarkConfig& config);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for one run
  std::size_t n = 0;
};
MeanStd mean_std(std::span<const double> xs);

nlohmann::json to_json(const BenchmarkReport& r);
/// strategy,seed,task_acc,task_f1,concept_acc,concept_f1,data,k
std::string tradeoff_csv(const BenchmarkReport& r);
/// Human-readable grid: strategies as rows, data settings as column groups,
/// "acc/f1" cells with mean +- std; "-" for concept scores of vanilla models.
std::string format_benchmark(const BenchmarkReport& r);
void write_benchmark(const BenchmarkReport& r, const std::filesystem::path& dir);

}  // namespace cbe
